"""ECE, Brier score, AUROC and reliability-diagram bins.

Bins are equal width over [0, 1]. Bin ``m`` (1-based) covers
``((m-1)/M, m/M]``; bin 1 also includes 0 so every confidence lands somewhere
and c=1.0 goes to the top bin. Bin edges are computed as ``m / M`` so that
decimal confidences such as 0.3 compare equal to their edge.

AUROC is the Mann-Whitney statistic: a tied (correct, incorrect) pair counts
one half. When outcomes carry the log-odds their confidence was derived from,
ties in the float confidence are broken by the log-odds. The logistic function
saturates to exactly 1.0 above roughly 37 in double precision, which would
otherwise manufacture ties that do not exist in the underlying scores.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, InputError

DEFAULT_BINS = 10


@dataclass(frozen=True)
class ScoredOutcome:
    confidence: float
    correct: bool
    logit: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise InputError(f"confidence must be in [0, 1], got {self.confidence!r}")


class Outcomes(NamedTuple):
    """Column form of a list of outcomes; what every metric works on."""

    confidence: np.ndarray
    correct: np.ndarray
    logit: np.ndarray | None = None

    @classmethod
    def from_records(cls, records, use_logit: bool = True) -> "Outcomes":
        records = list(records)
        if any(r.confidence is None for r in records):
            raise InputError("every record needs a confidence; run the confidence pass first")
        conf = np.array([r.confidence for r in records], dtype=np.float64)
        correct = np.array([r.correct for r in records], dtype=bool)
        logit = np.array([r.log_odds for r in records], dtype=np.float64) if use_logit else None
        return cls(conf, correct, logit)


@dataclass(frozen=True)
class ReliabilityBin:
    index: int
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


@dataclass
class CalibrationReport:
    n: int
    m_bins: int
    bins: list[ReliabilityBin]
    ece: float
    brier: float
    auroc: float | None
    accuracy: float
    temperature: dict | None = None
    ece_ts: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {
            "n": self.n,
            "m_bins": self.m_bins,
            "accuracy": self.accuracy,
            "ece": self.ece,
            "brier": self.brier,
            "bins": [asdict(b) for b in self.bins],
        }
        # undefined AUROC is an absent key, never null
        if self.auroc is not None:
            d["auroc"] = self.auroc
        if self.temperature is not None:
            d["temperature"] = self.temperature
        if self.ece_ts is not None:
            d["ece_ts"] = self.ece_ts
        d.update(self.extra)
        return d


def as_outcomes(outcomes) -> Outcomes:
    if isinstance(outcomes, Outcomes):
        return outcomes
    outcomes = list(outcomes)
    conf = np.array([o.confidence for o in outcomes], dtype=np.float64)
    correct = np.array([bool(o.correct) for o in outcomes], dtype=bool)
    logit = None
    if outcomes and all(o.logit is not None for o in outcomes):
        logit = np.array([o.logit for o in outcomes], dtype=np.float64)
    return Outcomes(conf, correct, logit)


def _nonempty(o: Outcomes) -> None:
    if o.confidence.size == 0:
        raise EmptyInput("no outcomes")


def bin_edges(m_bins: int) -> np.ndarray:
    return np.arange(m_bins + 1, dtype=np.float64) / m_bins


def bin_indices(confidence: np.ndarray, m_bins: int) -> np.ndarray:
    """0-based bin index for each confidence under the right-closed rule."""
    if m_bins < 1:
        raise InputError(f"m_bins must be >= 1, got {m_bins}")
    inner = bin_edges(m_bins)[1:-1]
    # count of inner edges strictly below c
    return np.searchsorted(inner, confidence, side="left")


def reliability_bins(outcomes, m_bins: int = DEFAULT_BINS) -> list[ReliabilityBin]:
    o = as_outcomes(outcomes)
    idx = bin_indices(o.confidence, m_bins)
    counts = np.bincount(idx, minlength=m_bins)
    conf_sum = np.bincount(idx, weights=o.confidence, minlength=m_bins)
    hit_sum = np.bincount(idx, weights=o.correct.astype(np.float64), minlength=m_bins)
    edges = bin_edges(m_bins)
    bins = []
    for m in range(m_bins):
        n = int(counts[m])
        bins.append(
            ReliabilityBin(
                index=m + 1,
                lower=float(edges[m]),
                upper=float(edges[m + 1]),
                count=n,
                mean_confidence=float(conf_sum[m] / n) if n else 0.0,
                accuracy=float(hit_sum[m] / n) if n else 0.0,
            )
        )
    return bins


def ece(outcomes, m_bins: int = DEFAULT_BINS) -> float:
    """Bin-weighted mean |accuracy - confidence|; empty bins contribute nothing."""
    o = as_outcomes(outcomes)
    _nonempty(o)
    return _ece_from_bins(reliability_bins(o, m_bins), o.confidence.size)


def _ece_from_bins(bins: Sequence[ReliabilityBin], n: int) -> float:
    return float(sum(b.count / n * abs(b.accuracy - b.mean_confidence) for b in bins if b.count))


def brier(outcomes) -> float:
    o = as_outcomes(outcomes)
    _nonempty(o)
    return float(np.mean((o.confidence - o.correct.astype(np.float64)) ** 2))


def _average_ranks(conf: np.ndarray, logit: np.ndarray | None) -> np.ndarray:
    if logit is None:
        order = np.argsort(conf, kind="mergesort")
        keys = (conf[order],)
    else:
        order = np.lexsort((logit, conf))
        keys = (conf[order], logit[order])
    n = conf.size
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = False
    for k in keys:
        new_group[1:] |= k[1:] != k[:-1]
    starts = np.flatnonzero(new_group)
    ends = np.append(starts[1:], n)
    # average of 1-based ranks start+1 .. end
    group_rank = (starts + 1 + ends) / 2.0
    ranks_sorted = np.repeat(group_rank, ends - starts)
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = ranks_sorted
    return ranks


def auroc(outcomes) -> float | None:
    """P(score of a random correct item > a random incorrect one), ties 1/2.

    ``None`` when either class is empty. O(N log N) via average ranks.
    """
    o = as_outcomes(outcomes)
    n_pos = int(o.correct.sum())
    n_neg = int(o.correct.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(o.confidence, o.logit)
    u = ranks[o.correct].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def full_report(outcomes, m_bins: int = DEFAULT_BINS) -> CalibrationReport:
    o = as_outcomes(outcomes)
    _nonempty(o)
    bins = reliability_bins(o, m_bins)
    n = int(o.confidence.size)
    return CalibrationReport(
        n=n,
        m_bins=m_bins,
        bins=bins,
        ece=_ece_from_bins(bins, n),
        brier=brier(o),
        auroc=auroc(o),
        accuracy=float(o.correct.mean()),
    )


def write_reliability_csv(bins: Sequence[ReliabilityBin], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "lower", "upper", "count", "mean_confidence", "accuracy"])
        for b in bins:
            w.writerow([b.index, repr(b.lower), repr(b.upper), b.count, repr(b.mean_confidence), repr(b.accuracy)])

