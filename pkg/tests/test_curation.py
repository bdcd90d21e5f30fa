import json
import random
import threading
import time

import pytest

from calibrated_reasoning.backends import GenerationResponse, OracleBackend
from calibrated_reasoning.curation import (
    REASONING,
    SELF_EVALUATION,
    CurationConfig,
    SftExample,
    VerdictFile,
    export_sft,
    generation_phase,
    label_phase,
    mixing_phase,
    run_curation,
)
from calibrated_reasoning.errors import BackendError, InputError
from calibrated_reasoning.records import Problem, iter_jsonl

from conftest import make_record


def problems(n):
    return [Problem(f"p{i:03d}", f"question {i}", str(i + 10)) for i in range(n)]


class Flaky:
    """Oracle wrapper whose n-th call raises."""

    def __init__(self, inner, fail_on):
        self.inner = inner
        self.model_name = inner.model_name
        self.max_in_flight = 1
        self.calls = 0
        self.fail_on = fail_on

    def generate(self, problem, sample_indices, hint=False):
        self.calls += 1
        if self.calls == self.fail_on:
            raise BackendError("connection reset")
        return self.inner.generate(problem, sample_indices, hint)


def test_config_validation():
    with pytest.raises(InputError):
        CurationConfig(K=0)
    with pytest.raises(InputError):
        CurationConfig(K=1, iterations=0)
    with pytest.raises(InputError):
        CurationConfig(K=1, rationalize=True)


def test_record_count_and_order():
    recs = generation_phase(problems(2), OracleBackend(seed=1), CurationConfig(K=3))
    assert [r.key for r in recs] == [("p000", 0), ("p000", 1), ("p000", 2), ("p001", 0), ("p001", 1), ("p001", 2)]
    assert all(r.check() == [] and r.confidence is not None for r in recs)


def test_accuracy_interval():
    recs = generation_phase(problems(1000), OracleBackend(accuracy=0.5, seed=77), CurationConfig(K=1))
    assert 0.46 <= sum(r.correct for r in recs) / 1000 <= 0.54


def test_resume_after_failure(tmp_path):
    ps = problems(2)
    cfg = CurationConfig(K=3, seed=2)
    ckpt = tmp_path / "records.jsonl"
    oracle = OracleBackend(seed=2)
    with pytest.raises(BackendError) as exc:
        generation_phase(ps, Flaky(oracle, fail_on=5), cfg, ckpt)
    assert (exc.value.problem_id, exc.value.sample_index) == ("p001", 1)
    before = ckpt.read_bytes().splitlines()
    assert len(before) == 4
    marker = json.loads((tmp_path / "records.jsonl.resume.json").read_text())
    assert marker["completed"] == 4 and marker["total"] == 6
    resumed = generation_phase(ps, oracle, cfg, ckpt, resume=True)
    after = ckpt.read_bytes().splitlines()
    assert after[:4] == before and len(after) == 6
    assert not (tmp_path / "records.jsonl.resume.json").exists()
    assert resumed == generation_phase(ps, oracle, cfg)


def test_concurrent_generation_keeps_canonical_order():
    class Jittery:
        model_name = "j"
        max_in_flight = 4

        def __init__(self):
            self.inner = OracleBackend(seed=5)
            self.active = 0
            self.peak = 0
            self.lock = threading.Lock()

        def generate(self, problem, ks, hint=False):
            with self.lock:
                self.active += 1
                self.peak = max(self.peak, self.active)
            time.sleep(random.random() * 0.003)
            with self.lock:
                self.active -= 1
            return self.inner.generate(problem, ks)

    b = Jittery()
    ps = problems(10)
    got = generation_phase(ps, b, CurationConfig(K=4, max_in_flight=4))
    assert got == generation_phase(ps, OracleBackend(seed=5), CurationConfig(K=4))
    assert 1 < b.peak <= 4


def test_label_phase_examples():
    ps = problems(2)
    recs = [make_record("p000", k, correct=k == 0) for k in range(3)] + [
        make_record("p001", k, correct=k == 2) for k in range(3)
    ]
    d_reason, d_eval = label_phase(recs, ps)
    assert len(d_reason) == 2 and len(d_eval) == 6
    assert sorted(e.label for e in d_eval) == ["no"] * 4 + ["yes"] * 2
    assert all(e.task == REASONING and e.label is None for e in d_reason)
    assert d_reason[0].target == recs[0].path and d_reason[0].prompt == ps[0].prompt
    yes = next(e for e in d_eval if e.label == "yes")
    assert "Is the answer correct?" in yes.prompt and recs[0].path in yes.prompt

    none_right, all_no = label_phase([make_record("p000", k, correct=False) for k in range(3)], ps)
    assert none_right == [] and {e.label for e in all_no} == {"no"}
    all_right, all_yes = label_phase([make_record("p000", k) for k in range(3)], ps)
    assert len(all_right) == len(all_yes) and {e.label for e in all_yes} == {"yes"}


def test_custom_label_tokens():
    cfg = CurationConfig(K=1, eval_yes_label=" Yes", eval_no_label=" No")
    _, d_eval = label_phase([make_record("p000", 0), make_record("p000", 1, correct=False)], problems(1), cfg)
    assert [e.target for e in d_eval] == [" Yes", " No"]
    assert [e.label for e in d_eval] == ["yes", "no"]


def test_example_label_invariant():
    with pytest.raises(ValueError):
        SftExample(REASONING, "p", "t", "q", 0, "yes")
    with pytest.raises(ValueError):
        SftExample(SELF_EVALUATION, "p", "t", "q", 0)


def test_mixing():
    ps = problems(5)
    recs = generation_phase(ps, OracleBackend(seed=3), CurationConfig(K=4))
    d_reason, d_eval = label_phase(recs, ps)
    a = mixing_phase(d_reason, d_eval, 11)
    assert a == mixing_phase(d_reason, d_eval, 11)
    b = mixing_phase(d_reason, d_eval, 12)
    assert a != b
    assert sorted(x.sort_key() for x in a) == sorted(x.sort_key() for x in b)
    assert sorted(x.sort_key() for x in mixing_phase([], d_eval, 1)) == sorted(x.sort_key() for x in d_eval)


def test_export(tmp_path):
    ex = [
        SftExample(REASONING, "q", "full path text", "p0", 0),
        SftExample(SELF_EVALUATION, "judge", "yes", "p0", 0, "yes"),
    ]
    path = tmp_path / "sft.jsonl"
    export_sft(ex, path)
    rows = [obj for _, _, obj in iter_jsonl(path)]
    assert len(rows) == len(ex)
    assert rows[0]["completion"] == "full path text" and "label" not in rows[0]
    assert rows[1]["completion"] == "yes" and rows[1]["label"] == "yes"
    assert {"prompt", "completion", "task"} <= set(rows[0])


def test_run_curation_layout_and_lineage(tmp_path):
    ps = problems(10)
    rep = run_curation(
        ps, lambda t: OracleBackend(seed=t, model_name=f"gen{t}"), CurationConfig(K=3, iterations=2, seed=5),
        tmp_path, created_at="2026-01-01T00:00:00Z",
    )
    assert [c.generator for c in rep.iterations] == ["gen1", "gen2"]
    meta = json.loads((tmp_path / "iter_02" / "run.jsonl").read_text().splitlines()[0])["_meta"]
    assert meta["iteration"] == 2 and meta["trained_from_iteration"] == 1 and meta["model_name"] == "gen2"
    total = [obj for _, _, obj in iter_jsonl(tmp_path / "sft_total.jsonl")]
    assert sum(r["task"] == SELF_EVALUATION for r in total) == 30
    assert (tmp_path / "sft_total.jsonl").read_bytes() == (tmp_path / "iter_02" / "sft_total.jsonl").read_bytes()
    report = json.loads((tmp_path / "curation_report.json").read_text())
    assert report["mixing_seed"] == 5 and len(report["iterations"]) == 2


def test_star_mode_and_rationalization(tmp_path):
    ps = problems(20)
    rep = run_curation(ps, lambda t: OracleBackend(accuracy=0.05, seed=1),
                       CurationConfig(K=2, mode="star", rationalize=True), tmp_path)
    c = rep.iterations[0]
    assert c.n_eval_yes == c.n_eval_no == 0
    assert c.n_rationalized > 0 and c.n_reason == c.n_correct + c.n_rationalized
    rows = [obj for _, _, obj in iter_jsonl(tmp_path / "sft_total.jsonl")]
    assert {r["task"] for r in rows} == {REASONING}
    # hinted prompts never leak into the training prompts
    assert all("Hint" not in r["prompt"] for r in rows)


def test_code_problems_use_verdicts(tmp_path):
    class CodeBackend:
        model_name = "c"
        max_in_flight = 1

        def generate(self, problem, ks, hint=False):
            return [GenerationResponse(k, f"```python\ndef f(x):\n    return x + {k}\n```", -0.5, -1.0) for k in ks]

    p = Problem("c1", "write f", "unused", "code")
    verdicts = tmp_path / "verdicts.jsonl"
    verdicts.write_text(
        '{"problem_id": "c1", "sample_index": 0, "passed": true}\n'
        '{"problem_id": "c1", "sample_index": 1, "passed": false}\n'
    )
    recs = generation_phase([p], CodeBackend(), CurationConfig(K=2), checker=VerdictFile(verdicts))
    assert [r.correct for r in recs] == [True, False]
    assert recs[0].extraction_method == "code_block"
    with pytest.raises(InputError):
        generation_phase([p], CodeBackend(), CurationConfig(K=2))
