import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogids import dataset as ds
from fogids.errors import SchemaError
from fogids.evalharness.metrics import evaluate
from fogids.pipeline import (Alert, AlertLog, Pipeline, PipelineError, Stage, StageConfig,
                             read_alert_log, run_pipeline, stage1_detect, stage2_classify,
                             verdict_row)
from synth import synth_records


class StubStage:
    """Stands in for a trained Stage: fixed score rows, cycling per call."""

    def __init__(self, task, rows, threshold=0.5):
        self.config = StageConfig(task, threshold=threshold)
        self.rows = [np.asarray(r, dtype=float) for r in rows]
        self.calls = 0
        self.model_id = f"stub-{task}"

    @property
    def class_names(self):
        return self.config.label_task().class_names

    def scores(self, records):
        out = np.stack([self.rows[(self.calls + i) % len(self.rows)] for i in range(len(records))])
        self.calls += len(records)
        return out


class Boom(StubStage):
    def scores(self, records):
        raise ValueError("broken model")


RECORDS = synth_records(40, seed=21)
UNIFORM4 = [[0.25] * 4]


def test_stage_config_defaults():
    assert StageConfig.stage1().normalize is False
    assert StageConfig.stage2().normalize is True
    assert StageConfig.stage1().label_task().name == "binary"
    assert StageConfig.stage2().label_task().name == "category"


def test_threshold_boundary_is_anomaly():
    res = stage1_detect(StubStage("binary", [[0.5, 0.5]]), RECORDS[0])
    assert res.decision == "anomaly" and res.attack_score == 0.5
    res = stage1_detect(StubStage("binary", [[0.5, 0.5]], threshold=0.6), RECORDS[0])
    assert res.decision == "normal"


def test_constant_normal_stub_passes_everything():
    alerts = AlertLog()
    s2 = StubStage("category", UNIFORM4)
    verdicts = list(run_pipeline(RECORDS, StubStage("binary", [[1.0, 0.0]]), s2, alerts))
    assert all(v.stage1.decision == "normal" and v.stage2 is None for v in verdicts)
    assert alerts.alerts == [] and s2.calls == 0


def test_uniform_stage2_picks_dos():
    res = stage2_classify(StubStage("category", UNIFORM4), RECORDS[0])
    assert res.category == "DoS"
    assert sum(res.distribution) == 1.0


def test_empty_stream():
    alerts = AlertLog()
    assert list(run_pipeline([], StubStage("binary", [[0, 1]]), StubStage("category", UNIFORM4),
                             alerts)) == []
    assert alerts.alerts == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=0, max_size=40))
def test_conservation_and_alerts(flags):
    s1 = StubStage("binary", [[0.0, 1.0] if f else [1.0, 0.0] for f in flags] or [[1, 0]])
    s2 = StubStage("category", [[0.1, 0.2, 0.3, 0.4]])
    p = Pipeline(s1, s2)
    records = RECORDS[:len(flags)]
    verdicts = list(p.run(records))
    assert [v.record_id for v in verdicts] == [r.line for r in records]
    anomalies = [v for v in verdicts if v.stage1.decision == "anomaly"]
    assert len(anomalies) == sum(flags) == p.stats["stage2_calls"] == s2.calls
    assert all((v.stage2 is not None) == (v.stage1.decision == "anomaly") for v in verdicts)
    assert all(t >= 0 for v in verdicts for t in v.timings.values())
    first = [a.record_id for a in p.alerts.alerts if a.level == "anomaly"]
    second = [a.record_id for a in p.alerts.alerts if a.level == "categorized"]
    assert first == second == [v.record_id for v in anomalies]
    assert all(a.category == "U2R" for a in p.alerts.alerts if a.level == "categorized")


def test_errors_carry_record_id():
    p = Pipeline(Boom("binary", [[0, 1]]), StubStage("category", UNIFORM4))
    with pytest.raises(PipelineError) as ei:
        list(p.run(RECORDS[3:5]))
    assert ei.value.record_id == RECORDS[3].line


def test_alert_log_file_round_trip(tmp_path):
    path = tmp_path / "alerts.log"
    log = AlertLog(path)
    a = Alert("anomaly", 7, 1.5, ("m1",))
    b = Alert("categorized", 7, 2.25, ("m2",), "Probe")
    log.append(a)
    log.append(b)
    assert read_alert_log(path) == [a, b]


def test_trained_stages_and_bundle(stages, synth_test, tmp_path):
    s1, s2 = stages
    path = tmp_path / "s1.fids"
    s1.save(path)
    back = Stage.load(path)
    assert back.to_bytes() == s1.to_bytes()
    assert np.array_equal(back.scores(synth_test), s1.scores(synth_test))
    with pytest.raises(SchemaError):
        Stage.load(path, expected_schema_hash="f" * 16)


def test_stage2_distribution_sums_to_one(stages, synth_test):
    _, s2 = stages
    rec = next(r for r in synth_test if r.label == "neptune")
    res = stage2_classify(s2, rec)
    assert abs(sum(res.distribution) - 1.0) <= 1e-9
    assert res.category in ds.CATEGORIES


def test_offline_decisions_match_evaluation(stages, synth_test):
    s1, s2 = stages
    verdicts = list(run_pipeline(synth_test, s1, s2))
    m = evaluate(s1.model, s1.preprocessor.matrix(synth_test, ds.binary_task()))
    pred = np.array([v.stage1.decision == "anomaly" for v in verdicts], dtype=int)
    truth = np.array([r.label != "normal" for r in synth_test], dtype=int)
    assert (pred == truth).mean() == m.accuracy
    # stage 2 reaches exactly the stage-1 positives
    assert sum(v.stage2 is not None for v in verdicts) == pred.sum()


def test_category_cross_check(stages, synth_test):
    _, s2 = stages
    attacks = [r for r in synth_test if r.label != "normal"]
    m = evaluate(s2.model, s2.preprocessor.matrix(attacks, ds.category_task()), None)
    cats = [stage2_classify(s2, r).category for r in attacks]
    truth = [ds.category_task().category_of(r.label) for r in attacks]
    assert np.mean([c == t for c, t in zip(cats, truth)]) == m.accuracy


def test_end_to_end_deterministic(stages, synth_test):
    s1, s2 = stages

    def stream():
        return [(v.record_id, v.stage1.decision, v.stage1.attack_score,
                 v.stage2 and (v.stage2.category, v.stage2.distribution))
                for v in run_pipeline(synth_test, s1, s2)]

    assert stream() == stream()


def test_verdict_row_keys(stages, synth_test):
    s1, s2 = stages
    rows = [verdict_row(v) for v in run_pipeline(synth_test[:30], s1, s2)]
    assert all({"record_id", "decision", "attack_score", "stage1_seconds"} <= set(r) for r in rows)
    assert all(("category" in r) == (r["decision"] == "anomaly") for r in rows)


def test_stage_rejects_mismatched_model(stages):
    s1, s2 = stages
    with pytest.raises(SchemaError):
        Stage(s1.config, s1.preprocessor, s2.model)
