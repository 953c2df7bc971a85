import os
import pathlib

import numpy as np
import pytest

from fogids import dataset as ds
from fogids.pipeline import StageConfig, train_stage
from synth import synth_records

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA_DIR = pathlib.Path(os.environ.get("FOGIDS_DATA_DIR", ROOT / "data" / "nslkdd"))

_criteria = {}       # nodeid -> criterion number
_outcomes = {}       # criterion number -> list of (nodeid, outcome)


def make_matrix(X, y, n_classes=None, preprocessing=""):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.int64)
    k = n_classes or int(y.max()) + 1
    return ds.FeatureMatrix(X, tuple(f"f{i}" for i in range(X.shape[1])), y,
                            tuple(f"c{i}" for i in range(k)), preprocessing)


def nslkdd_path(name):
    """Path of a real NSL-KDD file; fails the calling test when it is absent."""
    path = DATA_DIR / ds.FILE_NAMES[name]
    if not path.exists():
        pytest.fail(f"NSL-KDD dataset unavailable: {path} not found "
                    f"(set FOGIDS_DATA_DIR to the directory holding {ds.FILE_NAMES[name]})",
                    pytrace=False)
    return path


@pytest.fixture(scope="session")
def synth_train():
    return synth_records(3000, seed=1)


@pytest.fixture(scope="session")
def synth_test():
    return synth_records(600, seed=2)


@pytest.fixture(scope="session")
def stages(synth_train):
    cache = {}
    s1 = train_stage(synth_train, StageConfig.stage1(), seed=0, cache=cache)
    s2 = train_stage(synth_train, StageConfig.stage2(), seed=0, cache=cache)
    return s1, s2


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m:
            _criteria[item.nodeid] = m.args[0]


def pytest_runtest_logreport(report):
    n = _criteria.get(report.nodeid)
    if n is None:
        return
    runs = _outcomes.setdefault(n, {})
    if report.failed:
        runs[report.nodeid] = "failed"
    elif report.when == "call" or report.skipped:
        runs.setdefault(report.nodeid, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        runs = _outcomes[n]
        ok = all(o == "passed" for o in runs.values())
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({len(runs)} test(s))")
