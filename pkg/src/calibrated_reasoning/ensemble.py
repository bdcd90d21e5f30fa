"""Self-consistency and confidence-informed self-consistency over K samples.

Two normalisations live here on purpose and are never mixed:

* selection (CISC) uses a temperature softmax over per-path confidences;
* the reported ensemble confidence of a CISC decision is the winner's share of
  the raw confidence mass, ``sum_{a_i = a} c_i / sum_j c_j``.

Ties are resolved in favour of the answer seen first in path order. Scores
within ``TIE_TOL`` of the maximum count as tied, so CISC at a very large
softmax temperature reproduces SC, tie-breaks included.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, InputError, NonPositiveTemperature, ZeroTotalConfidence
from .metrics import CalibrationReport, Outcomes, full_report

SC = "SC"
CISC = "CISC"
MODES = (SC, CISC)
TIE_TOL = 1e-9
CISC_T_GRID = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class PathVote:
    answer: str
    confidence: float


@dataclass(frozen=True)
class EnsembleInput:
    problem_id: str
    paths: tuple[PathVote, ...]

    @classmethod
    def of(cls, problem_id: str, answers: Sequence[str], confidences: Sequence[float] | None = None):
        if confidences is None:
            confidences = [1.0] * len(answers)
        if len(answers) != len(confidences):
            raise InputError("answers and confidences differ in length")
        return cls(problem_id, tuple(PathVote(a, float(c)) for a, c in zip(answers, confidences)))

    @property
    def answers(self) -> list[str]:
        return [p.answer for p in self.paths]

    @property
    def confidences(self) -> np.ndarray:
        return np.array([p.confidence for p in self.paths], dtype=np.float64)


@dataclass(frozen=True)
class EnsembleDecision:
    answer: str
    mode: str
    answer_scores: dict[str, float]
    ensemble_confidence: float
    tie_broken: bool
    softmax_temperature: float | None = None


def distinct_answers(answers: Iterable[str]) -> list[str]:
    """Unique answers in first-seen order."""
    return list(dict.fromkeys(answers))


def one_hot(answers: Sequence[str]) -> tuple[list[str], np.ndarray]:
    labels = distinct_answers(answers)
    col = {a: j for j, a in enumerate(labels)}
    m = np.zeros((len(answers), len(labels)), dtype=np.float64)
    for i, a in enumerate(answers):
        m[i, col[a]] = 1.0
    return labels, m


def pick_first_max(scores: np.ndarray, tol: float = TIE_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise winner column and tie flag; columns are in first-seen order."""
    scores = np.atleast_2d(scores)
    near = scores >= scores.max(axis=1, keepdims=True) - tol
    return near.argmax(axis=1), near.sum(axis=1) > 1


def softmax_weights(confidences: np.ndarray, t: float) -> np.ndarray:
    """exp(c_i / t) / sum_j exp(c_j / t) along the last axis, shifted by the max."""
    if not t > 0:
        raise NonPositiveTemperature(t)
    c = np.asarray(confidences, dtype=np.float64)
    e = np.exp((c - c.max(axis=-1, keepdims=True)) / t)
    return e / e.sum(axis=-1, keepdims=True)


def cisc_scores(confidences: np.ndarray, onehot: np.ndarray, t: float) -> np.ndarray:
    """Per-answer CISC scores for a batch of confidence rows sharing one answer pattern.

    ``confidences`` is (B, m); ``onehot`` is (m, A). Returns (B, A).
    """
    return softmax_weights(confidences, t) @ onehot


def _check(inp: EnsembleInput) -> None:
    if not inp.paths:
        raise EmptyInput(f"no paths for problem {inp.problem_id!r}")


def self_consistency(inp: EnsembleInput) -> EnsembleDecision:
    _check(inp)
    labels, oh = one_hot(inp.answers)
    scores = oh.sum(axis=0) / len(inp.paths)
    win, tied = pick_first_max(scores)
    w = int(win[0])
    return EnsembleDecision(
        answer=labels[w],
        mode=SC,
        answer_scores={a: float(s) for a, s in zip(labels, scores)},
        ensemble_confidence=float(scores[w]),
        tie_broken=bool(tied[0]),
    )


def cisc(inp: EnsembleInput, t: float = 1.0) -> EnsembleDecision:
    _check(inp)
    if not t > 0:
        raise NonPositiveTemperature(t)
    labels, oh = one_hot(inp.answers)
    scores = cisc_scores(inp.confidences[None, :], oh, t)[0]
    win, tied = pick_first_max(scores)
    w = int(win[0])
    try:
        conf = ensemble_confidence_raw(inp, labels[w])
    except ZeroTotalConfidence:
        # every path said "surely wrong"; the softmax share is all that is left
        conf = float(scores[w])
    return EnsembleDecision(
        answer=labels[w],
        mode=CISC,
        answer_scores={a: float(s) for a, s in zip(labels, scores)},
        ensemble_confidence=conf,
        tie_broken=bool(tied[0]),
        softmax_temperature=t,
    )


def ensemble_confidence_raw(inp: EnsembleInput, answer: str) -> float:
    c = inp.confidences
    total = float(c.sum())
    if not total > 0:
        raise ZeroTotalConfidence(f"confidences of {inp.problem_id!r} sum to {total}")
    mask = np.array([p.answer == answer for p in inp.paths])
    return float(c[mask].sum() / total)


def decide(inp: EnsembleInput, mode: str, t: float = 1.0) -> EnsembleDecision:
    if mode == SC:
        return self_consistency(inp)
    if mode == CISC:
        return cisc(inp, t)
    raise InputError(f"unknown aggregation mode {mode!r}")


# -- from run records -----------------------------------------------------------


def inputs_from_records(records: Iterable, k: int | None = None) -> list[EnsembleInput]:
    """Group records by problem (first-appearance order) and keep the ``k``
    lowest sample indices of each."""
    groups: dict[str, list] = {}
    for r in records:
        if r.confidence is None:
            raise InputError(f"record {r.key} has no confidence")
        groups.setdefault(r.problem_id, []).append(r)
    out = []
    for pid, rs in groups.items():
        rs = sorted(rs, key=lambda r: r.sample_index)
        if k is not None:
            rs = rs[:k]
        out.append(EnsembleInput(pid, tuple(PathVote(r.answer, r.confidence) for r in rs)))
    return out


# -- sweeps ----------------------------------------------------------------------


@dataclass
class SweepCell:
    k: int
    mode: str
    n: int
    accuracy: float
    report: CalibrationReport
    softmax_temperature: float | None = None
    decisions: list[tuple[str, EnsembleDecision, bool]] = field(default_factory=list, repr=False)


def _accuracy(inputs: Sequence[EnsembleInput], gold: Mapping[str, str], mode: str, t: float) -> float:
    hits = [decide(i, mode, t).answer == gold[i.problem_id] for i in inputs]
    return float(np.mean(hits)) if hits else 0.0


def tune_cisc_temperature(
    inputs: Sequence[EnsembleInput], gold: Mapping[str, str], grid: Sequence[float] = CISC_T_GRID
) -> float:
    """Grid value with the highest CISC accuracy; earliest grid entry on ties."""
    if not inputs:
        raise EmptyInput("no ensemble inputs to tune on")
    accs = [_accuracy(inputs, gold, CISC, t) for t in grid]
    return float(grid[int(np.argmax(accs))])


def scaling_sweep(
    runs: Mapping[int, Sequence[EnsembleInput]],
    gold: Mapping[str, str],
    modes: Sequence[str] = MODES,
    t: float = 1.0,
    m_bins: int = 10,
) -> list[SweepCell]:
    """Accuracy and a calibration report of the ensemble confidence per (K, mode)."""
    cells = []
    for k in sorted(runs):
        inputs = runs[k]
        for mode in modes:
            decisions = []
            for inp in inputs:
                if inp.problem_id not in gold:
                    raise InputError(f"no gold answer for {inp.problem_id!r}")
                d = decide(inp, mode, t)
                decisions.append((inp.problem_id, d, d.answer == gold[inp.problem_id]))
            if not decisions:
                raise EmptyInput(f"no problems for K={k}")
            conf = np.array([d.ensemble_confidence for _, d, _ in decisions])
            hit = np.array([c for _, _, c in decisions], dtype=bool)
            cells.append(
                SweepCell(
                    k=k,
                    mode=mode,
                    n=len(decisions),
                    accuracy=float(hit.mean()),
                    report=full_report(Outcomes(np.clip(conf, 0.0, 1.0), hit), m_bins),
                    softmax_temperature=t if mode == CISC else None,
                    decisions=decisions,
                )
            )
    return cells


def write_ensemble_csv(cells: Sequence[SweepCell], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["problem_id", "K", "mode", "answer", "correct", "ensemble_confidence"])
        for cell in cells:
            for pid, d, hit in cell.decisions:
                w.writerow([pid, cell.k, cell.mode, d.answer, int(hit), repr(d.ensemble_confidence)])


def write_sweep_csv(cells: Sequence[SweepCell], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "mode", "n", "accuracy", "auroc", "ece", "brier", "softmax_t"])
        for c in cells:
            r = c.report
            w.writerow([
                c.k,
                c.mode,
                c.n,
                repr(c.accuracy),
                "" if r.auroc is None else repr(r.auroc),
                repr(r.ece),
                repr(r.brier),
                "" if c.softmax_temperature is None else repr(c.softmax_temperature),
            ])
