"""Problems, generation records and run files, persisted as JSONL.

Floats are written with Python's shortest round-trip ``repr`` so a reload is
bit-exact. Optional fields are omitted rather than written as ``null``.
A run file starts with one ``{"_meta": {...}}`` line followed by one record
per line.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .confidence import sigmoid
from .errors import DuplicateId, InvariantViolation, ParseError

DOMAIN_TAGS = ("math", "code", "other")
CONFIDENCE_TOL = 1e-12


@dataclass(frozen=True)
class Problem:
    id: str
    prompt: str
    gold_answer: str
    domain_tag: str = "math"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "gold_answer": self.gold_answer,
            "domain_tag": self.domain_tag,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Problem":
        p = cls(
            id=_req_str(obj, "id"),
            prompt=_req_str(obj, "prompt"),
            gold_answer=_req_str(obj, "gold_answer"),
            domain_tag=obj.get("domain_tag", "math"),
        )
        if not p.gold_answer:
            raise ValueError("gold_answer must be non-empty")
        if p.domain_tag not in DOMAIN_TAGS:
            raise ValueError(f"domain_tag must be one of {DOMAIN_TAGS}, got {p.domain_tag!r}")
        return p


@dataclass(frozen=True)
class GenerationRecord:
    problem_id: str
    sample_index: int
    path: str
    raw_answer: str
    answer: str
    correct: bool
    logprob_yes: float
    logprob_no: float
    confidence: float | None = None
    # audit trail for the correctness label; absent for hand-built records
    extraction_method: str | None = None

    @property
    def log_odds(self) -> float:
        return self.logprob_yes - self.logprob_no

    @property
    def key(self) -> tuple[str, int]:
        return (self.problem_id, self.sample_index)

    def with_confidence(self) -> "GenerationRecord":
        return replace(self, confidence=sigmoid(self.log_odds))

    def check(self) -> list[tuple[str, str]]:
        """Per-record invariant check: list of (rule, detail)."""
        out = []
        if not isinstance(self.sample_index, int) or self.sample_index < 0:
            out.append(("NegativeSampleIndex", f"sample_index={self.sample_index!r}"))
        for name in ("logprob_yes", "logprob_no"):
            v = getattr(self, name)
            if not math.isfinite(v):
                out.append(("NonFiniteLogprob", f"{name}={v!r}"))
            elif v > 0:
                out.append(("PositiveLogprob", f"{name}={v!r}"))
        c = self.confidence
        if c is not None:
            if not (0.0 <= c <= 1.0):
                out.append(("ConfidenceOutOfRange", f"confidence={c!r}"))
            elif math.isfinite(self.log_odds):
                expected = sigmoid(self.log_odds)
                if abs(c - expected) > CONFIDENCE_TOL:
                    out.append(("ConfidenceMismatch", f"confidence={c!r}, sigmoid(log-odds)={expected!r}"))
        return out

    def to_json(self) -> dict:
        d = {
            "problem_id": self.problem_id,
            "sample_index": self.sample_index,
            "path": self.path,
            "raw_answer": self.raw_answer,
            "answer": self.answer,
            "correct": self.correct,
            "logprob_yes": self.logprob_yes,
            "logprob_no": self.logprob_no,
        }
        if self.confidence is not None:
            d["confidence"] = self.confidence
        if self.extraction_method is not None:
            d["extraction_method"] = self.extraction_method
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "GenerationRecord":
        correct = obj["correct"]
        if not isinstance(correct, bool):
            raise ValueError("correct must be a boolean")
        sample_index = obj["sample_index"]
        if not isinstance(sample_index, int) or isinstance(sample_index, bool):
            raise ValueError("sample_index must be an integer")
        conf = obj.get("confidence")
        return cls(
            problem_id=_req_str(obj, "problem_id"),
            sample_index=sample_index,
            path=_req_str(obj, "path"),
            raw_answer=_req_str(obj, "raw_answer"),
            answer=_req_str(obj, "answer"),
            correct=correct,
            logprob_yes=float(obj["logprob_yes"]),
            logprob_no=float(obj["logprob_no"]),
            confidence=None if conf is None else float(conf),
            extraction_method=obj.get("extraction_method"),
        )


@dataclass(frozen=True)
class RunMetadata:
    model_name: str
    decode_temperature: float
    K: int
    created_at: str
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {
            "model_name": self.model_name,
            "decode_temperature": self.decode_temperature,
            "K": self.K,
            "created_at": self.created_at,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "RunMetadata":
        known = {"model_name", "decode_temperature", "K", "created_at"}
        return cls(
            model_name=str(obj["model_name"]),
            decode_temperature=float(obj["decode_temperature"]),
            K=int(obj["K"]),
            created_at=str(obj["created_at"]),
            extra={k: v for k, v in obj.items() if k not in known},
        )


@dataclass(frozen=True)
class RunFile:
    metadata: RunMetadata
    records: tuple[GenerationRecord, ...]


@dataclass(frozen=True)
class Violation:
    index: int | None
    rule: str
    detail: str = ""


def timestamp_now() -> str:
    """UTC ISO timestamp; honours SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        dt = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        dt = datetime.now(timezone.utc).replace(microsecond=0)
    return dt.isoformat().replace("+00:00", "Z")


# -- JSONL plumbing ---------------------------------------------------------


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def iter_jsonl(path) -> Iterator[tuple[int, int, dict]]:
    """Yield (line_number, byte_offset, object) for every non-blank line."""
    path = Path(path)
    data = path.read_bytes()
    offset = 0
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        start = offset
        offset += len(raw) + 1
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(path, lineno, start, str(exc)) from None
        if not isinstance(obj, dict):
            raise ParseError(path, lineno, start, "expected a JSON object")
        yield lineno, start, obj


def write_jsonl(path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row))
            fh.write("\n")
    os.replace(tmp, path)


# -- problems ----------------------------------------------------------------


def load_problems(path) -> list[Problem]:
    problems: list[Problem] = []
    seen: set[str] = set()
    for lineno, offset, obj in iter_jsonl(path):
        try:
            p = Problem.from_json(obj)
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(path, lineno, offset, f"invalid problem: {exc}") from None
        if p.id in seen:
            raise DuplicateId(p.id)
        seen.add(p.id)
        problems.append(p)
    return problems


def save_problems(problems: Iterable[Problem], path) -> None:
    write_jsonl(path, (p.to_json() for p in problems))


# -- records and runs --------------------------------------------------------


def _check_all(records: Iterable[GenerationRecord]) -> None:
    for i, r in enumerate(records):
        bad = r.check()
        if bad:
            rule, detail = bad[0]
            raise InvariantViolation(f"record {i} violates {rule}: {detail}")


def save_records(records: Iterable[GenerationRecord], path) -> None:
    records = list(records)
    _check_all(records)
    write_jsonl(path, (r.to_json() for r in records))


def _parse_record(path, lineno, offset, obj) -> GenerationRecord:
    try:
        return GenerationRecord.from_json(obj)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(path, lineno, offset, f"invalid record: {exc}") from None


def load_records(path) -> list[GenerationRecord]:
    """Records from a plain record file or a run file (the meta line is skipped)."""
    return [
        _parse_record(path, lineno, offset, obj)
        for lineno, offset, obj in iter_jsonl(path)
        if "_meta" not in obj
    ]


def save_run(run: RunFile, path) -> None:
    _check_all(run.records)
    rows = [{"_meta": run.metadata.to_json()}]
    rows.extend(r.to_json() for r in run.records)
    write_jsonl(path, rows)


def load_run(path) -> RunFile:
    meta = None
    records = []
    for lineno, offset, obj in iter_jsonl(path):
        if "_meta" in obj:
            if meta is not None or records:
                raise ParseError(path, lineno, offset, "metadata must be the first line")
            try:
                meta = RunMetadata.from_json(obj["_meta"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(path, lineno, offset, f"invalid metadata: {exc}") from None
            continue
        if meta is None:
            raise ParseError(path, lineno, offset, "run file must start with a _meta line")
        records.append(_parse_record(path, lineno, offset, obj))
    if meta is None:
        raise ParseError(path, 1, 0, "empty run file")
    return RunFile(meta, tuple(records))


def validate_run(run: RunFile, problems: Iterable[Problem]) -> list[Violation]:
    """Every invariant breach in ``run`` as a value; empty list means valid."""
    problems = list(problems)
    known = {p.id for p in problems}
    out: list[Violation] = []
    seen: set[tuple[str, int]] = set()
    k = run.metadata.K
    for i, r in enumerate(run.records):
        for rule, detail in r.check():
            out.append(Violation(i, rule, detail))
        if r.problem_id not in known:
            out.append(Violation(i, "DanglingProblemId", r.problem_id))
        if r.key in seen:
            out.append(Violation(i, "DuplicateRecordKey", f"{r.key}"))
        seen.add(r.key)
        if isinstance(r.sample_index, int) and r.sample_index >= k:
            out.append(Violation(i, "SampleIndexOutOfRange", f"sample_index={r.sample_index} >= K={k}"))
    if len(run.records) > len(problems) * k:
        out.append(Violation(None, "TooManyRecords", f"{len(run.records)} > {len(problems)}*{k}"))
    return out


def _req_str(obj: dict, key: str) -> str:
    v = obj[key]
    if not isinstance(v, str):
        raise ValueError(f"{key} must be a string")
    return v

