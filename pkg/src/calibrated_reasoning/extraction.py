"""Final-answer extraction from generated text.

Math answers come from the last top-level ``\\boxed{...}`` span, matched with
a brace counter so nested groups such as ``\\frac{1}{2}`` survive. Code
answers go through a staged fallback: fenced block, then the first line that
looks like code, then prepending the expected function signature if the model
left it out.

Normalisation is purely textual. It under-approximates mathematical
equivalence (``0.5`` and ``\\frac{1}{2}`` stay distinct).
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass

BOXED = "\\boxed{"

BOXED_METHOD = "boxed"
PREFIX_METHOD = "prefix_heuristic"
CODE_BLOCK = "code_block"
KEYWORD_RECOVERY = "keyword_recovery"
SIGNATURE_INJECTED = "signature_injected"
NONE = "none"


@dataclass(frozen=True)
class ExtractionResult:
    raw_span: str
    normalized: str
    method: str
    complete: bool

    def to_json(self) -> dict:
        return asdict(self)


_NO_ANSWER = ExtractionResult("", "", NONE, False)


def boxed_spans(text: str) -> list[tuple[int, int, bool]]:
    """Top-level ``\\boxed{`` spans as (content_start, content_end, closed).

    Single left-to-right pass; a ``\\boxed{`` inside an open box is treated
    as ordinary content.
    """
    spans = []
    i = 0
    n = len(text)
    while True:
        j = text.find(BOXED, i)
        if j < 0:
            return spans
        start = j + len(BOXED)
        depth = 1
        k = start
        while k < n:
            ch = text[k]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    break
            k += 1
        if k >= n:
            spans.append((start, n, False))
            return spans
        spans.append((start, k, True))
        i = k + 1


def extract_boxed(text: str) -> ExtractionResult:
    spans = boxed_spans(text)
    if not spans:
        return _NO_ANSWER
    start, end, closed = spans[-1]
    raw = text[start:end]
    norm = normalize_answer(raw)
    if not norm:
        return ExtractionResult(raw, "", NONE, closed)
    return ExtractionResult(raw, norm, BOXED_METHOD, closed)


_ANSWER_PREFIX = re.compile(r"(?:the (?:final )?answer is|answer\s*[:=])\s*(.+)", re.IGNORECASE)


def extract_answer(text: str) -> ExtractionResult:
    """Boxed span if present, else the text after an "answer is" phrase."""
    res = extract_boxed(text)
    if res.method != NONE:
        return res
    matches = list(_ANSWER_PREFIX.finditer(text))
    if matches:
        raw = matches[-1].group(1).strip().splitlines()[0]
        norm = normalize_answer(raw)
        if norm:
            return ExtractionResult(raw, norm, PREFIX_METHOD, True)
    return _NO_ANSWER


# -- normalisation ---------------------------------------------------------------

_WS = re.compile(r"\s+")
_THOUSANDS = re.compile(r"^([+-]?)(\d{1,3}(?:,\d{3})+)(\.\d+)?$")
_NUMBER = re.compile(r"^([+-]?)(\d+)(?:\.(\d+))?$")


def _canonical_number(s: str) -> str:
    m = _THOUSANDS.match(s)
    if m:
        s = m.group(1) + m.group(2).replace(",", "") + (m.group(3) or "")
    m = _NUMBER.match(s)
    if not m:
        return s
    sign, whole, frac = m.groups()
    if sign == "+":
        sign = ""
    frac = (frac or "").rstrip("0")
    return f"{sign}{whole}.{frac}" if frac else f"{sign}{whole}"


def _normalize_once(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    s = s.replace("\\left", "").replace("\\right", "")
    s = s.replace("\\dfrac", "\\frac")
    s = _WS.sub(" ", s).strip()
    if s.endswith("."):
        s = s[:-1].rstrip()
    return _canonical_number(s)


def normalize_answer(raw: str) -> str:
    """Canonical string form used for answer comparison.

    Rules are re-applied until nothing changes, so the result is idempotent
    even when one rule exposes work for another ("$5$." -> "$5$" -> "5").
    """
    s = raw
    for _ in range(16):
        nxt = _normalize_once(s)
        if nxt == s:
            break
        s = nxt
    return s


def answers_match(predicted: str, gold: str) -> bool:
    return normalize_answer(predicted) == normalize_answer(gold)


# -- code ------------------------------------------------------------------------

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)(```|\Z)", re.DOTALL)
_CODE_START = re.compile(r"^[ \t]*(?:import\s|from\s+\S+\s+import\s|def\s|return\b)", re.MULTILINE)
_SIG_NAME = re.compile(r"def\s+([A-Za-z_]\w*)\s*\(")


def _has_signature(code: str, signature: str) -> bool:
    m = _SIG_NAME.search(signature)
    if not m:
        return signature.strip() in code
    return re.search(rf"def\s+{re.escape(m.group(1))}\s*\(", code) is not None


def _inject_signature(code: str, signature: str) -> str:
    body = []
    for line in code.splitlines():
        if line.strip() and not line.startswith((" ", "\t")):
            line = "    " + line
        body.append(line)
    return signature.rstrip() + "\n" + "\n".join(body)


def extract_code(text: str, canonical_signature: str = "") -> ExtractionResult:
    blocks = list(_FENCE.finditer(text))
    if blocks:
        # prefer an explicit python block, else the first fence
        m = next((b for b in blocks if b.group(1).lower() in ("python", "py", "python3")), blocks[0])
        code = m.group(2)
        complete = m.group(3) == "```"
        method = CODE_BLOCK
    else:
        m = _CODE_START.search(text)
        if not m:
            return _NO_ANSWER
        code = text[m.start():].rstrip() + "\n"
        complete = True
        method = KEYWORD_RECOVERY
    if canonical_signature and not _has_signature(code, canonical_signature):
        code = _inject_signature(code.rstrip("\n"), canonical_signature) + "\n"
        method = SIGNATURE_INJECTED
    if not code.strip():
        return ExtractionResult(code, "", NONE, complete)
    return ExtractionResult(code, code, method, complete)
