import json
import random

import pytest

from ssk_edge.experiments import (SUITES, ConfigError, ExperimentConfig, ReplicaRecord,
                                  ReplicaRejected, plan_units, read_records, run_suite, run_unit,
                                  same_content, summarize)
from ssk_edge.experiments import suites as suites_mod
from ssk_edge.experiments.summary import CSV_COLUMNS


def make(suite="transition", n=40, m=12, seed=3, **kw):
    d = {"suite": suite, "ensemble": {"alpha": 2, "n": n}, "m_replicas": m, "master_seed": seed}
    if suite in ("transition", "universality"):
        d["b_grid"] = [-1.0, 2.0]
    if suite == "g_derivatives":
        d["b_grid"] = [-1.0]
    d.update(kw)
    return ExperimentConfig.from_dict(d)


SMOKE = {
    "transition": {},
    "clt1": {"params": {"spike_j": [0.0, 0.5]}},
    "clt2": {"method": {"logdet_route": "continuant"}},
    "independence": {"params": {"recursion": True}},
    "edge": {"n_grid": [40, 80]},
    "g_derivatives": {},
    "corner_accuracy": {"n": 2000, "m": 4},
    "eigvec_decay": {"n": 3000, "m": 4},
    "stickiness": {"ensemble": {"alpha": 1, "n": 30, "spike_j": 0.5}},
    "universality": {"ensemble": {"alpha": 2, "n": 30}},
}


# --- configuration ---------------------------------------------------------

def test_config_json_roundtrip_and_hash():
    c = make()
    back = ExperimentConfig.from_json(c.to_json())
    assert back.to_dict() == c.to_dict()
    assert back.content_hash() == c.content_hash()
    d = c.to_dict()
    d["threads"], d["output"] = 4, {"records": "/x/y.jsonl"}
    assert ExperimentConfig.from_dict(d).content_hash() == c.content_hash()
    d["master_seed"] = 4
    assert ExperimentConfig.from_dict(d).content_hash() != c.content_hash()


@pytest.mark.parametrize("patch,field", [
    ({"suite": "nope"}, "suite"),
    ({"m_replicas": 0}, "m_replicas"),
    ({"b_grid": []}, "b_grid"),
    ({"b_grid": ["x"]}, "b_grid[0]"),
    ({"n_grid": [1]}, "n_grid[0]"),
    ({"method": {"contour": "spiral"}}, "method.contour"),
    ({"params": {"bogus": 1}}, "params"),
    ({"thresholds": {"bogus": 1}}, "thresholds"),
    ({"extra": 1}, "top level"),
    ({"ensemble": {"alpha": 3, "n": 10}}, "ensemble"),
    ({"threads": 0}, "threads"),
])
def test_config_errors_name_the_field(patch, field):
    d = make().to_dict()
    d.update(patch)
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(d)
    assert field in str(exc.value)


def test_config_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "suite": "transition",\n  "ensemble": {,}\n}')
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.load(p)
    assert "line 3" in str(exc.value)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_plan_units_groups_are_distinct():
    c = make("clt2", params={"spike_j": [0.0, 0.5]}, n_grid=[40, 60])
    units = plan_units(c)
    assert len(units) == 2 * 2 * c.m_replicas
    groups = {(u.variant, u.n): u.group for u in units}
    assert len(set(groups.values())) == 4


# --- records ---------------------------------------------------------------

def test_record_rejects_non_finite():
    with pytest.raises(ValueError):
        ReplicaRecord(0, f=float("nan"))
    ReplicaRecord(0, f=float("nan"), rejected=True)


def test_read_records_ignores_torn_tail(tmp_path):
    p = tmp_path / "r.jsonl"
    good = ReplicaRecord(0, b=1.0, n=10, f=0.5).to_json()
    p.write_text(good + "\n" + good[:20])
    recs = read_records(p)
    assert len(recs) == 1 and recs[0].f == 0.5


# --- runner ----------------------------------------------------------------

def test_every_suite_runs(tmp_path, small_tw):
    assert set(SMOKE) == set(SUITES)
    for suite, kw in SMOKE.items():
        kw = dict(kw)
        n, m = kw.pop("n", 40), kw.pop("m", 6)
        c = make(suite, n=n, m=m, **kw)
        s = run_suite(c, str(tmp_path / f"{suite}.jsonl"), tw_reference=small_tw)
        assert s.checks, suite
        assert (tmp_path / f"{suite}.jsonl.summary.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        assert json.loads((tmp_path / f"{suite}.jsonl.config.json").read_text())["suite"] == suite


def test_replay_is_bit_identical(tmp_path, small_tw):
    c = make()
    run_suite(c, str(tmp_path / "a.jsonl"), tw_reference=small_tw)
    run_suite(c, str(tmp_path / "b.jsonl"), tw_reference=small_tw)
    assert same_content(read_records(tmp_path / "a.jsonl"), read_records(tmp_path / "b.jsonl"))


def test_resume_after_interruption(tmp_path, small_tw):
    c = make(m=10)
    full = tmp_path / "full.jsonl"
    run_suite(c, str(full), tw_reference=small_tw)
    lines = full.read_text().splitlines(keepends=True)
    part = tmp_path / "part.jsonl"
    # keep 7 records (one unit cut in half) plus a torn line
    part.write_text("".join(lines[:7]) + lines[7][:15])
    (tmp_path / "part.jsonl.config.json").write_text(c.to_json())
    run_suite(c, str(part), tw_reference=small_tw)
    assert same_content(read_records(full), read_records(part))


def test_resume_refuses_other_config(tmp_path, small_tw):
    p = str(tmp_path / "r.jsonl")
    run_suite(make(m=3), p, tw_reference=small_tw)
    with pytest.raises(ConfigError):
        run_suite(make(m=3, seed=9), p, tw_reference=small_tw)
    run_suite(make(m=3, seed=9), p, resume=False, tw_reference=small_tw)


def test_threads_do_not_change_records(tmp_path, small_tw):
    c = make("clt2", m=8)
    run_suite(c, str(tmp_path / "one.jsonl"))
    run_suite(c, str(tmp_path / "two.jsonl"), threads=2)
    assert same_content(read_records(tmp_path / "one.jsonl"), read_records(tmp_path / "two.jsonl"))


def test_summary_independent_of_record_order(tmp_path, small_tw):
    c = make(m=10)
    p = tmp_path / "r.jsonl"
    run_suite(c, str(p), tw_reference=small_tw)
    recs = read_records(p)
    a = summarize(c, recs, small_tw)
    random.Random(0).shuffle(recs)
    b = summarize(c, recs, small_tw)
    assert a.to_csv() == b.to_csv()
    assert a.provenance["config_hash"] == c.content_hash()
    assert a.provenance["compute_seconds"] > 0


def test_rejections_resample_then_give_up(monkeypatch):
    calls = []

    def always_reject(config, unit, plan):
        calls.append(plan.attempt)
        raise ReplicaRejected("synthetic")

    monkeypatch.setitem(suites_mod.KERNELS, "clt2", always_reject)
    c = make("clt2", m=1)
    recs = run_unit(c, plan_units(c)[0])
    assert calls == list(range(suites_mod.MAX_ATTEMPTS))
    assert len(recs) == 1 and recs[0].rejected
    assert len(recs[0].diagnostics["rejections"]) == suites_mod.MAX_ATTEMPTS
    s = summarize(c, recs + [ReplicaRecord(1, n=40, variant="J=0", fluct_stat=0.1)])
    assert not s.check("rejection_rate").passed


def test_stickiness_zero_spike_is_exact(tmp_path):
    c = make("stickiness", n=30, m=5, ensemble={"alpha": 2, "n": 30, "spike_j": 0.0})
    s = run_suite(c, str(tmp_path / "s.jsonl"))
    for r in read_records(tmp_path / "s.jsonl"):
        assert r.diagnostics["max_diff_top"] == 0.0
    assert s.check("rejection_rate").passed
