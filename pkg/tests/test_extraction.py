import time

import pytest
from hypothesis import given, settings, strategies as st

from calibrated_reasoning.extraction import (
    answers_match,
    extract_answer,
    extract_boxed,
    extract_code,
    normalize_answer,
)


def brace_oracle(text):
    """Content of the last top-level boxed span via an explicit stack."""
    last = None
    i = 0
    opener = "\\boxed{"
    while i < len(text):
        if text.startswith(opener, i):
            stack = 1
            j = i + len(opener)
            start = j
            while j < len(text) and stack:
                stack += {"{": 1, "}": -1}.get(text[j], 0)
                j += 1
            if stack:
                return text[start:], False
            last = (text[start : j - 1], True)
            i = j
        else:
            i += 1
    return last


def test_boxed_examples():
    r = extract_boxed("so the total is \\boxed{42}")
    assert (r.normalized, r.complete, r.method) == ("42", True, "boxed")
    r = extract_boxed("half: \\boxed{\\frac{1}{2}}.")
    assert r.normalized == "\\frac{1}{2}"
    assert r.raw_span == brace_oracle("half: \\boxed{\\frac{1}{2}}.")[0]
    r = extract_boxed("so \\boxed{7")
    assert (r.normalized, r.complete, r.method) == ("7", False, "boxed")


def test_last_box_wins_and_absence():
    assert extract_boxed("\\boxed{1} then \\boxed{2}").normalized == "2"
    r = extract_boxed("no answer here")
    assert (r.method, r.normalized) == ("none", "")


def test_prefix_fallback():
    r = extract_answer("Thus the answer is 1,000.")
    assert (r.method, r.normalized) == ("prefix_heuristic", "1000")
    assert extract_answer("\\boxed{3} and the answer is 4").normalized == "3"


def test_normalize_examples():
    assert normalize_answer(" 1,000 ") == "1000"
    assert normalize_answer("$\\dfrac{1}{2}$") == "\\frac{1}{2}"
    assert normalize_answer("3.0") == "3"
    assert normalize_answer("+5") == "5"
    assert normalize_answer("\\left( 1,  2 \\right)") == "( 1, 2 )"
    assert normalize_answer("12.") == "12"
    assert answers_match("$5$.", "5")
    # textual only: equal values in different notation stay distinct
    assert not answers_match("0.5", "\\frac{1}{2}")


fuzz_text = st.text(alphabet="0123456789.,+-$ {}\\leftrighdfacboxd()\n", max_size=30)


@settings(max_examples=1000, deadline=None)
@given(s=fuzz_text)
def test_normalize_idempotent(s):
    once = normalize_answer(s)
    assert normalize_answer(once) == once


@settings(max_examples=500, deadline=None)
@given(s=st.text(max_size=60))
def test_boxed_matches_stack_oracle(s):
    text = "pre " + s
    r = extract_boxed(text)
    ref = brace_oracle(text)
    if ref is None:
        assert r.method == "none" and r.normalized == ""
    else:
        assert (r.raw_span, r.complete) == ref
        assert (r.method == "none") == (r.normalized == "")


@settings(max_examples=500, deadline=None)
@given(s=st.text(alphabet="0123456789abc{}\\frac ,.$", max_size=30))
def test_boxed_idempotent_on_own_output(s):
    r = extract_boxed("\\boxed{" + s + "}")
    if not r.complete or r.method == "none":
        return
    again = extract_boxed("\\boxed{" + r.normalized + "}")
    assert again.normalized == r.normalized


def test_linear_time_on_long_inputs():
    texts = ["\\boxed{" * 50_000, "{" * 200_000 + "\\boxed{" + "}" * 200_000, "\\boxed{}" * 50_000]
    start = time.perf_counter()
    for t in texts:
        extract_boxed(t)
    assert time.perf_counter() - start < 2.0


def test_code_fenced():
    text = "Here:\n```python\ndef rev(s):\n    return s[::-1]\n```\nDone."
    r = extract_code(text, "def rev(s):")
    assert r.method == "code_block"
    assert r.normalized == "def rev(s):\n    return s[::-1]\n"


def test_code_signature_injected():
    r = extract_code("The body is\nreturn s[::-1]", "def rev(s):")
    assert r.method == "signature_injected"
    assert r.normalized.startswith("def rev(s):\n")
    assert "    return s[::-1]" in r.normalized


def test_code_keyword_recovery():
    r = extract_code("Sure.\nimport math\ndef f(x):\n    return math.sqrt(x)", "def f(x):")
    assert r.method == "keyword_recovery"
    assert r.normalized.startswith("import math")


def test_code_none():
    r = extract_code("I am not sure how to solve this.", "def f(x):")
    assert (r.method, r.normalized) == ("none", "")


@pytest.mark.parametrize("text", ["", "```", "```python\n", "def", "\\boxed{"])
def test_never_raises(text):
    extract_code(text, "def f():")
    extract_answer(text)
