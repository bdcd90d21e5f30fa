"""Training-set construction from self-generated reasoning paths.

Every iteration samples K paths per problem, labels each one by checking its
final answer, and builds two pools:

* reasoning examples: the correct paths, as plain prompt -> path pairs
* self-evaluation examples: every path, as a yes/no question about whether
  its answer is right, with the label as target

The pools are pooled and shuffled with a seeded generator and exported as
JSONL for an external fine-tuning job. Positive-only curation (``mode="star"``)
keeps just the reasoning pool, optionally with hinted rationalisations for
problems that had no correct sample.
"""

from __future__ import annotations

import json
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .backends import Backend, GenerationResponse
from .errors import BackendError, InputError, InvariantViolation, ParseError
from .extraction import NONE, extract_answer, extract_code, normalize_answer
from .prompts import EVAL_TEMPLATE_VERSION, render_eval_prompt
from .records import (
    GenerationRecord,
    Problem,
    RunFile,
    RunMetadata,
    dumps_line,
    iter_jsonl,
    load_run,
    save_run,
    timestamp_now,
    write_jsonl,
)

DUAL = "dual"
STAR = "star"
REASONING = "reasoning"
SELF_EVALUATION = "self_evaluation"


@dataclass(frozen=True)
class CurationConfig:
    K: int
    iterations: int = 1
    seed: int = 0
    decode_temperature: float = 0.7
    eval_yes_label: str = "yes"
    eval_no_label: str = "no"
    mode: str = DUAL
    rationalize: bool = False
    max_in_flight: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise InputError("K must be >= 1")
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")
        if self.mode not in (DUAL, STAR):
            raise InputError(f"mode must be {DUAL!r} or {STAR!r}")
        if self.rationalize and self.mode != STAR:
            raise InputError("rationalization is only available in star mode")
        if self.max_in_flight < 1:
            raise InputError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class SftExample:
    task: str
    prompt: str
    target: str
    source_problem_id: str
    source_sample_index: int
    label: str | None = None

    def __post_init__(self):
        if self.task == REASONING and self.label is not None:
            raise ValueError("reasoning examples carry no label")
        if self.task == SELF_EVALUATION and self.label not in ("yes", "no"):
            raise ValueError("self-evaluation examples need a yes/no label")
        if self.task not in (REASONING, SELF_EVALUATION):
            raise ValueError(f"unknown task {self.task!r}")

    def sort_key(self) -> tuple:
        return (self.task, self.source_problem_id, self.source_sample_index, self.label or "", self.prompt, self.target)


@dataclass
class IterationCounts:
    iteration: int
    n_problems: int
    n_samples: int
    n_correct: int
    n_reason: int
    n_eval_yes: int
    n_eval_no: int
    n_rationalized: int = 0
    generator: str = ""


@dataclass
class CurationReport:
    mode: str
    mixing_seed: int
    eval_template_version: str = EVAL_TEMPLATE_VERSION
    iterations: list[IterationCounts] = field(default_factory=list)

    def check(self) -> None:
        for c in self.iterations:
            if self.mode == DUAL:
                if c.n_eval_yes + c.n_eval_no != c.n_samples:
                    raise InvariantViolation(f"iteration {c.iteration}: yes + no != samples")
                if not c.n_reason == c.n_eval_yes == c.n_correct:
                    raise InvariantViolation(f"iteration {c.iteration}: reasoning/yes/correct counts disagree")
            elif c.n_reason != c.n_correct + c.n_rationalized:
                raise InvariantViolation(f"iteration {c.iteration}: reasoning count mismatch")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "mixing_seed": self.mixing_seed,
            "eval_template_version": self.eval_template_version,
            "iterations": [asdict(c) for c in self.iterations],
        }


# -- correctness ---------------------------------------------------------------------

CodeChecker = Callable[[Problem, int, str], bool]


class VerdictFile:
    """Code-correctness verdicts produced by an external test runner.

    One JSON object per line: ``{"problem_id", "sample_index", "passed"}``.
    """

    def __init__(self, path):
        self.verdicts: dict[tuple[str, int], bool] = {}
        for lineno, offset, obj in iter_jsonl(path):
            try:
                key = (str(obj["problem_id"]), int(obj["sample_index"]))
                passed = obj["passed"]
            except (KeyError, TypeError, ValueError):
                raise ParseError(path, lineno, offset, "verdict needs problem_id, sample_index, passed") from None
            if not isinstance(passed, bool):
                raise ParseError(path, lineno, offset, "passed must be a boolean")
            self.verdicts[key] = passed

    def __call__(self, problem: Problem, sample_index: int, code: str) -> bool:
        try:
            return self.verdicts[(problem.id, sample_index)]
        except KeyError:
            raise InputError(f"no verdict for ({problem.id!r}, {sample_index})") from None


def to_record(problem: Problem, resp: GenerationResponse, checker: CodeChecker | None = None) -> GenerationRecord:
    if problem.domain_tag == "code":
        ext = extract_code(resp.path_text)
        if checker is None:
            raise InputError(f"problem {problem.id!r} is a code problem but no checker was given")
        correct = ext.method != NONE and bool(checker(problem, resp.sample_index, ext.normalized))
    else:
        ext = extract_answer(resp.path_text)
        correct = ext.method != NONE and ext.normalized == normalize_answer(problem.gold_answer)
    return GenerationRecord(
        problem_id=problem.id,
        sample_index=resp.sample_index,
        path=resp.path_text,
        raw_answer=ext.raw_span,
        answer=ext.normalized,
        correct=correct,
        logprob_yes=resp.logprob_yes,
        logprob_no=resp.logprob_no,
        extraction_method=ext.method,
    ).with_confidence()


# -- generation ----------------------------------------------------------------------


def _marker_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".resume.json")


def _load_checkpoint(checkpoint: Path, order: list[tuple[str, int]]) -> list[GenerationRecord]:
    if not checkpoint.exists():
        return []
    done = []
    for lineno, offset, obj in iter_jsonl(checkpoint):
        try:
            rec = GenerationRecord.from_json(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(checkpoint, lineno, offset, f"invalid record: {exc}") from None
        i = len(done)
        if i >= len(order) or rec.key != order[i]:
            raise ParseError(checkpoint, lineno, offset, "checkpoint does not match the canonical record order")
        done.append(rec)
    return done


def generation_phase(
    problems: Sequence[Problem],
    backend: Backend,
    config: CurationConfig,
    checkpoint=None,
    resume: bool = False,
    checker: CodeChecker | None = None,
) -> list[GenerationRecord]:
    """K records per problem in canonical (problem, sample index) order.

    With a ``checkpoint`` path every committed record is appended to it as
    it lands, so a backend failure leaves a usable prefix plus a
    ``.resume.json`` marker; ``resume=True`` picks up after that prefix.
    """
    order = [(p.id, k) for p in problems for k in range(config.K)]
    by_id = {p.id: p for p in problems}
    records: list[GenerationRecord] = []
    fh = None
    if checkpoint is not None:
        checkpoint = Path(checkpoint)
        checkpoint.parent.mkdir(parents=True, exist_ok=True)
        if resume:
            records = _load_checkpoint(checkpoint, order)
        fh = open(checkpoint, "a" if resume else "w", encoding="utf-8")

    def work(key):
        pid, k = key
        out = backend.generate(by_id[pid], [k])
        if len(out) != 1:
            raise BackendError(f"backend returned {len(out)} responses for one sample")
        return to_record(by_id[pid], out[0], checker)

    todo = order[len(records):]
    try:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            # bounded window so at most max_in_flight requests are outstanding
            window = config.max_in_flight
            futures = [pool.submit(work, key) for key in todo[:window]]
            nxt = window
            for i, key in enumerate(todo):
                fut = futures[i]
                try:
                    rec = fut.result()
                except BackendError as exc:
                    for f in futures[i + 1:]:
                        f.cancel()
                    raise BackendError(str(exc), key[0], key[1]) from exc
                records.append(rec)
                if fh is not None:
                    fh.write(dumps_line(rec.to_json()) + "\n")
                    fh.flush()
                if nxt < len(todo):
                    futures.append(pool.submit(work, todo[nxt]))
                    nxt += 1
    except BackendError as exc:
        if checkpoint is not None:
            _marker_path(checkpoint).write_text(
                json.dumps(
                    {
                        "completed": len(records),
                        "total": len(order),
                        "problem_id": exc.problem_id,
                        "sample_index": exc.sample_index,
                        "error": str(exc),
                    },
                    indent=2,
                )
                + "\n"
            )
        raise
    finally:
        if fh is not None:
            fh.close()
    if checkpoint is not None:
        marker = _marker_path(checkpoint)
        if marker.exists():
            marker.unlink()
    return records


# -- labelling, mixing, export -------------------------------------------------------


def label_phase(
    records: Iterable[GenerationRecord],
    problems: Iterable[Problem],
    config: CurationConfig | None = None,
) -> tuple[list[SftExample], list[SftExample]]:
    yes = config.eval_yes_label if config else "yes"
    no = config.eval_no_label if config else "no"
    by_id = {p.id: p for p in problems}
    d_reason: list[SftExample] = []
    d_eval: list[SftExample] = []
    for r in records:
        p = by_id[r.problem_id]
        if r.correct:
            d_reason.append(SftExample(REASONING, p.prompt, r.path, r.problem_id, r.sample_index))
        d_eval.append(
            SftExample(
                SELF_EVALUATION,
                render_eval_prompt(p.prompt, r.path, r.answer),
                yes if r.correct else no,
                r.problem_id,
                r.sample_index,
                "yes" if r.correct else "no",
            )
        )
    return d_reason, d_eval


def mixing_phase(d_reason: Sequence[SftExample], d_eval: Sequence[SftExample], seed: int) -> list[SftExample]:
    pooled = list(d_reason) + list(d_eval)
    random.Random(seed).shuffle(pooled)
    return pooled


def sft_row(ex: SftExample) -> dict:
    row = {"prompt": ex.prompt, "completion": ex.target, "task": ex.task}
    if ex.label is not None:
        row["label"] = ex.label
    row["source_problem_id"] = ex.source_problem_id
    row["source_sample_index"] = ex.source_sample_index
    return row


def export_sft(examples: Iterable[SftExample], path) -> None:
    write_jsonl(path, (sft_row(e) for e in examples))


def check_twins(d_reason: Iterable[SftExample], d_eval: Iterable[SftExample]) -> None:
    """Every reasoning example must have a yes-labelled evaluation twin."""
    yes = {(e.source_problem_id, e.source_sample_index) for e in d_eval if e.label == "yes"}
    for e in d_reason:
        if (e.source_problem_id, e.source_sample_index) not in yes:
            raise InvariantViolation(f"reasoning example {e.source_problem_id}/{e.source_sample_index} lacks a yes twin")


# -- iterations ----------------------------------------------------------------------


def _rationalize(problems, records, backend, config, checker) -> list[SftExample]:
    solved = {r.problem_id for r in records if r.correct}
    out = []
    for p in problems:
        if p.id in solved:
            continue
        resp = backend.generate(p, [0], hint=True)[0]
        rec = to_record(p, resp, checker)
        if rec.correct:
            # trained on without the hint, as if the model had found it alone
            out.append(SftExample(REASONING, p.prompt, rec.path, p.id, -1))
    return out


def run_curation(
    problems: Sequence[Problem],
    backend_for: Callable[[int], Backend],
    config: CurationConfig,
    out_dir,
    resume: bool = False,
    checker: CodeChecker | None = None,
    created_at: str | None = None,
) -> CurationReport:
    """Run ``config.iterations`` rounds and write everything under ``out_dir``.

    ``backend_for(t)`` supplies the generator for iteration t (1-based); it
    stands for the model produced by iteration t-1, since the fine-tuning
    itself happens outside this package. Layout::

        iter_01/run.jsonl  iter_01/sft_total.jsonl  ...
        sft_total.jsonl          (final iteration's mixture)
        curation_report.json
    """
    if not problems:
        raise InputError("no problems to curate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created_at = created_at or timestamp_now()
    report = CurationReport(config.mode, config.seed)
    previous = None
    mixed: list[SftExample] = []
    for t in range(1, config.iterations + 1):
        backend = backend_for(t)
        it_dir = out_dir / f"iter_{t:02d}"
        run_path = it_dir / "run.jsonl"
        if resume and run_path.exists():
            records = list(load_run(run_path).records)
        else:
            partial = it_dir / "records.partial.jsonl"
            records = generation_phase(problems, backend, config, partial, resume, checker)
            meta = RunMetadata(
                model_name=backend.model_name,
                decode_temperature=config.decode_temperature,
                K=config.K,
                created_at=created_at,
                extra={"iteration": t, "trained_from_iteration": previous, "seed": config.seed},
            )
            save_run(RunFile(meta, tuple(records)), run_path)
            os.remove(partial)
        d_reason, d_eval = label_phase(records, problems, config)
        n_rat = 0
        if config.mode == STAR:
            d_eval = []
            if config.rationalize:
                extra = _rationalize(problems, records, backend, config, checker)
                n_rat = len(extra)
                d_reason += extra
        else:
            check_twins(d_reason, d_eval)
        mixed = mixing_phase(d_reason, d_eval, config.seed + t - 1)
        export_sft(mixed, it_dir / "sft_total.jsonl")
        report.iterations.append(
            IterationCounts(
                iteration=t,
                n_problems=len(problems),
                n_samples=len(records),
                n_correct=sum(r.correct for r in records),
                n_reason=len(d_reason),
                n_eval_yes=sum(e.label == "yes" for e in d_eval),
                n_eval_no=sum(e.label == "no" for e in d_eval),
                n_rationalized=n_rat,
                generator=backend.model_name,
            )
        )
        previous = t
    report.check()
    export_sft(mixed, out_dir / "sft_total.jsonl")
    (out_dir / "curation_report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return report
