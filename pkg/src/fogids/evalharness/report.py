"""Report files: full CSV, markdown summary tables, per-figure data files."""

from __future__ import annotations

import csv
import os
import statistics
from collections import defaultdict

from .experiment import ROW_FIELDS

_INT = {"seed", "n_test"}
_FLOAT = {"accuracy", "fpr", "train_seconds", "predict_seconds"}


def _cell(key, value):
    if value is None:
        return ""
    if key in _FLOAT:
        return repr(float(value))
    return str(value)


def _parse(key, text):
    if key in _INT:
        return int(text) if text != "" else None
    if key in _FLOAT:
        return float(text) if text != "" else None
    return text


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(k, r.get(k)) for k in ROW_FIELDS})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(k, v) for k, v in r.items()} for r in csv.DictReader(fh)]


def aggregate(rows):
    """Mean and spread of accuracy over seeds, keyed by (task, name, rule, dataset)."""
    groups = defaultdict(list)
    for r in rows:
        if r["status"] == "ok":
            groups[(r["task"], r["name"], r["rule"], r["dataset"])].append(r["accuracy"])
    out = {}
    for key, accs in groups.items():
        spread = statistics.pstdev(accs) if len(accs) > 1 else 0.0
        out[key] = (statistics.fmean(accs), spread, len(accs))
    return out


def _pct(mean, spread, n):
    s = f"{100 * mean:.2f}"
    return f"{s} ± {100 * spread:.2f}" if n > 1 else s


def summary_markdown(rows) -> str:
    """One table per task, models down, test datasets across (accuracy %, mean ± sd over seeds)."""
    agg = aggregate(rows)
    lines = []
    titles = {"binary": "Anomaly detection (normal vs attack)",
              "category": "Attack classification (DoS / Probe / R2L / U2R)"}
    for task in ("binary", "category"):
        keys = [k for k in agg if k[0] == task]
        if not keys:
            continue
        datasets = sorted({k[3] for k in keys})
        models = list(dict.fromkeys((k[1], k[2]) for k in keys))
        lines += [f"## {titles[task]}", "",
                  "| Model | Rule | " + " | ".join(f"{d} accuracy (%)" for d in datasets) + " |",
                  "|---|---|" + "---|" * len(datasets)]
        for name, rule in models:
            cells = [_pct(*agg[(task, name, rule, d)]) if (task, name, rule, d) in agg else "n/a"
                     for d in datasets]
            lines.append(f"| {name} | {rule or '-'} | " + " | ".join(cells) + " |")
        lines.append("")
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        lines += ["## Failed runs", ""]
        lines += [f"- {r['task']} {r['name']} seed {r['seed']}: {r['error']}" for r in failed]
        lines.append("")
    return "\n".join(lines)


def figure_data(rows) -> dict:
    """Bar-chart values: {(task, dataset): [(label, mean accuracy)]}.

    Voting rows from a rule sweep contribute their best rule.
    """
    best = {}
    for (task, name, rule, dataset), (mean, _, _) in aggregate(rows).items():
        key = (task, dataset, name)
        if key not in best or mean > best[key][1]:
            best[key] = (rule, mean)
    figs = defaultdict(list)
    for (task, dataset, name), (rule, mean) in best.items():
        figs[(task, dataset)].append((name, rule, mean))
    return dict(figs)


def report(rows, out_dir, stem="results") -> list[str]:
    """Write ``<stem>.csv``, ``<stem>.md`` and one ``fig_<task>_<dataset>.csv`` per panel."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to report")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, f"{stem}.csv")
    write_csv(rows, path)
    written.append(path)
    path = os.path.join(out_dir, f"{stem}.md")
    with open(path, "w") as fh:
        fh.write(summary_markdown(rows))
    written.append(path)
    for (task, dataset), bars in sorted(figure_data(rows).items()):
        safe = "".join(c if c.isalnum() or c in "+-_" else "_" for c in dataset)
        path = os.path.join(out_dir, f"fig_{task}_{safe}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "rule", "accuracy"])
            w.writerows([n, r, repr(a)] for n, r, a in bars)
        written.append(path)
    return written
