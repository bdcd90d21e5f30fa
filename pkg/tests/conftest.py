import math

import pytest

from calibrated_reasoning.records import GenerationRecord, Problem


def make_record(pid="q1", k=0, z=0.0, correct=True, answer="1", with_conf=True) -> GenerationRecord:
    """Record whose log-odds equal ``z`` exactly (logprob_no = 0 shifted down)."""
    ly = -math.log1p(math.exp(-z)) if z > -30 else z
    ln = ly - z
    if ln > 0:
        ly, ln = ly - ln, 0.0
    rec = GenerationRecord(
        problem_id=pid,
        sample_index=k,
        path=f"reasoning for {pid} \\boxed{{{answer}}}",
        raw_answer=answer,
        answer=answer,
        correct=correct,
        logprob_yes=ly,
        logprob_no=ln,
    )
    return rec.with_confidence() if with_conf else rec


@pytest.fixture
def problems():
    return [Problem(f"q{i}", f"What is {i}+{i}?", str(2 * i)) for i in range(1, 4)]


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, whatever the capture mode."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})")
