import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibrated_reasoning.backends import OracleBackend
from calibrated_reasoning.curation import CurationConfig, generation_phase
from calibrated_reasoning.ensemble import (
    CISC,
    SC,
    EnsembleInput,
    cisc,
    ensemble_confidence_raw,
    inputs_from_records,
    scaling_sweep,
    self_consistency,
    softmax_weights,
    tune_cisc_temperature,
    write_ensemble_csv,
    write_sweep_csv,
)
from calibrated_reasoning.errors import EmptyInput, NonPositiveTemperature, ZeroTotalConfidence
from calibrated_reasoning.records import Problem

from conftest import make_record


def softmax_oracle(conf, t):
    e = [math.exp(c / t) for c in conf]
    s = sum(e)
    return [x / s for x in e]


def vote_oracle(answers, weights):
    """Winner by summed weight, earliest first appearance among exact ties."""
    scores = {}
    for a, w in zip(answers, weights):
        scores[a] = scores.get(a, 0.0) + w
    best = max(scores.values())
    return next(a for a in scores if scores[a] == best), scores


def test_sc_examples():
    d = self_consistency(EnsembleInput.of("p", ["A", "A", "B"]))
    assert d.answer == "A" and d.answer_scores["A"] == pytest.approx(2 / 3)
    assert d.ensemble_confidence == pytest.approx(2 / 3) and not d.tie_broken
    d = self_consistency(EnsembleInput.of("p", ["A"]))
    assert (d.answer, d.answer_scores["A"]) == ("A", 1.0)
    d = self_consistency(EnsembleInput.of("p", ["A", "B"]))
    assert d.answer == "A" and d.tie_broken


def test_cisc_worked_example():
    inp = EnsembleInput.of("p", ["A", "A", "B"], [0.2, 0.2, 0.9])
    w = softmax_weights(inp.confidences, 1.0)
    assert w == pytest.approx([0.2492, 0.2492, 0.5017], abs=1e-4)
    assert list(w) == pytest.approx(softmax_oracle([0.2, 0.2, 0.9], 1.0), abs=1e-15)
    d = cisc(inp, 1.0)
    assert d.answer == "B"
    assert d.answer_scores["B"] == pytest.approx(0.5017, abs=1e-4)
    assert d.softmax_temperature == 1.0
    assert self_consistency(inp).answer == "A"


def test_cisc_sharp_limit():
    d = cisc(EnsembleInput.of("p", ["A", "A", "B"], [0.2, 0.2, 0.9]), 1e-6)
    assert d.answer == "B" and d.answer_scores["B"] > 1 - 1e-6


def test_cisc_errors():
    with pytest.raises(EmptyInput):
        cisc(EnsembleInput("p", ()), 1.0)
    with pytest.raises(EmptyInput):
        self_consistency(EnsembleInput("p", ()))
    with pytest.raises(NonPositiveTemperature):
        cisc(EnsembleInput.of("p", ["A"], [0.5]), 0.0)


def test_raw_ensemble_confidence():
    inp = EnsembleInput.of("p", ["A", "A", "B"], [0.2, 0.2, 0.9])
    assert ensemble_confidence_raw(inp, "B") == pytest.approx(0.9 / 1.3, abs=1e-12)
    assert ensemble_confidence_raw(inp, "Z") == 0.0
    assert ensemble_confidence_raw(EnsembleInput.of("p", ["A"], [0.3]), "A") == 1.0
    with pytest.raises(ZeroTotalConfidence):
        ensemble_confidence_raw(EnsembleInput.of("p", ["A", "B"], [0.0, 0.0]), "A")
    # every path at zero confidence: CISC still decides, reporting the softmax share
    d = cisc(EnsembleInput.of("p", ["A", "B", "B"], [0.0, 0.0, 0.0]), 1.0)
    assert d.answer == "B" and d.ensemble_confidence == pytest.approx(2 / 3)


answers_st = st.lists(st.sampled_from("ABCD"), min_size=1, max_size=12)


@st.composite
def inputs(draw):
    ans = draw(answers_st)
    conf = draw(st.lists(st.floats(min_value=0, max_value=1), min_size=len(ans), max_size=len(ans)))
    return ans, conf


@settings(max_examples=300, deadline=None)
@given(data=inputs(), t=st.floats(min_value=0.01, max_value=100))
def test_cisc_matches_oracle(data, t):
    ans, conf = data
    d = cisc(EnsembleInput.of("p", ans, conf), t)
    w = softmax_oracle(conf, t)
    assert sum(d.answer_scores.values()) == pytest.approx(1.0, abs=1e-9)
    _, scores = vote_oracle(ans, w)
    for a, s in scores.items():
        assert d.answer_scores[a] == pytest.approx(s, abs=1e-12)
    # winner is within the tie tolerance of the top; earlier answers are not
    top = max(scores.values())
    assert d.answer_scores[d.answer] >= top - 1e-9
    first_seen = list(dict.fromkeys(ans))
    for a in first_seen[: first_seen.index(d.answer)]:
        assert scores[a] < top - 1e-9 + 1e-12


@settings(max_examples=300, deadline=None)
@given(data=inputs(), shift=st.floats(min_value=-5, max_value=5), t=st.floats(min_value=0.05, max_value=5))
def test_softmax_shift_invariance(data, shift, t):
    ans, conf = data
    a = cisc(EnsembleInput.of("p", ans, conf), t)
    b = cisc(EnsembleInput.of("p", ans, [c + shift for c in conf]), t)
    for k in a.answer_scores:
        assert a.answer_scores[k] == pytest.approx(b.answer_scores[k], abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(ans=answers_st, c=st.floats(min_value=0, max_value=1), t=st.floats(min_value=0.01, max_value=100))
def test_uniform_confidence_collapses_to_sc(ans, c, t):
    inp = EnsembleInput.of("p", ans, [c] * len(ans))
    a, b = cisc(inp, t), self_consistency(inp)
    assert a.answer == b.answer
    for k in b.answer_scores:
        assert a.answer_scores[k] == pytest.approx(b.answer_scores[k], abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(data=inputs())
def test_raw_confidence_partition(data):
    ans, conf = data
    if sum(conf) <= 0:
        return
    inp = EnsembleInput.of("p", ans, conf)
    assert sum(ensemble_confidence_raw(inp, a) for a in set(ans)) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(ans=answers_st)
def test_sc_matches_counting_oracle(ans):
    d = self_consistency(EnsembleInput.of("p", ans))
    counts = Counter(ans)
    best = max(counts.values())
    assert d.answer == next(a for a in dict.fromkeys(ans) if counts[a] == best)
    assert d.tie_broken == (sum(v == best for v in counts.values()) > 1)


def _oracle_run(n, k, seed, accuracy=0.6, fidelity=3.0, common=0.3):
    problems = [Problem(f"p{i:03d}", f"q{i}", str(1000 + i)) for i in range(n)]
    backend = OracleBackend(accuracy=accuracy, confidence_fidelity=fidelity, seed=seed, common_error_rate=common)
    recs = generation_phase(problems, backend, CurationConfig(K=k, seed=seed))
    return problems, recs, {p.id: p.gold_answer for p in problems}


def test_sweep_k1_identical_and_subsampling():
    problems, recs, gold = _oracle_run(60, 30, seed=2)
    runs = {k: inputs_from_records(recs, k) for k in (1, 10, 30)}
    for inp in runs[10]:
        # first ten sample indices, in order
        own = [r for r in recs if r.problem_id == inp.problem_id][:10]
        assert inp.answers == [r.answer for r in own]
    cells = scaling_sweep(runs, gold, (SC, CISC), t=0.5)
    by = {(c.k, c.mode): c for c in cells}
    assert by[(1, SC)].accuracy == by[(1, CISC)].accuracy
    assert by[(1, CISC)].softmax_temperature == 0.5 and by[(1, SC)].softmax_temperature is None


def test_sc_accuracy_non_decreasing_in_k():
    _, recs, gold = _oracle_run(300, 30, seed=5, accuracy=0.55, common=0.0)
    accs = [c.accuracy for c in scaling_sweep({k: inputs_from_records(recs, k) for k in (1, 5, 10, 30)}, gold, (SC,))]
    assert accs == sorted(accs)
    assert accs[-1] > accs[0]


def test_tune_and_csv(tmp_path):
    _, recs, gold = _oracle_run(40, 5, seed=9)
    inps = inputs_from_records(recs)
    t = tune_cisc_temperature(inps, gold)
    assert t in (0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
    cells = scaling_sweep({5: inps}, gold, (SC, CISC), t)
    write_ensemble_csv(cells, tmp_path / "ensemble.csv")
    write_sweep_csv(cells, tmp_path / "sweep.csv")
    rows = (tmp_path / "ensemble.csv").read_text().splitlines()
    assert rows[0] == "problem_id,K,mode,answer,correct,ensemble_confidence"
    assert len(rows) == 1 + 2 * 40
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "K,mode,n,accuracy,auroc,ece,brier,softmax_t"


def test_inputs_need_confidence():
    with pytest.raises(Exception):
        inputs_from_records([make_record(with_conf=False)])
