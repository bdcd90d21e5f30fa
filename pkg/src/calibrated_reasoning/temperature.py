"""Post-hoc temperature scaling of the yes/no log-odds.

The logit of a record is ``z = logprob_yes - logprob_no``; a temperature ``T``
maps its confidence to ``sigmoid(z / T)``. ``T`` is the minimiser of the mean
binary negative log-likelihood on a validation split, located by a 64-point
log-spaced grid followed by golden-section refinement.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .confidence import sigmoid
from .errors import DimensionMismatch, EmptyInput, NonPositiveTemperature

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = (0.05, 10.0)
GRID_POINTS = 64
GOLDEN_TOL = 1e-4
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll_before: float
    nll_after: float
    n_validation: int
    search_bounds: tuple[float, float]
    boundary_hit: bool = False
    degenerate: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        d["search_bounds"] = list(self.search_bounds)
        return d


def nll(z, o, t: float) -> float:
    """Mean binary NLL of outcomes ``o`` under probabilities sigmoid(z / t).

    Uses -log sigmoid(x) = log(1 + exp(-x)) via ``logaddexp`` so large |z/t|
    neither overflows nor loses the tail.
    """
    z = np.asarray(z, dtype=np.float64)
    o = np.asarray(o, dtype=bool)
    if z.shape != o.shape:
        raise DimensionMismatch(f"{z.shape} logits vs {o.shape} outcomes")
    if z.size == 0:
        raise EmptyInput("no logits")
    if not t > 0:
        raise NonPositiveTemperature(t)
    x = z / t
    # correct: -log sigmoid(x); incorrect: -log sigmoid(-x)
    signed = np.where(o, x, -x)
    return float(np.mean(np.logaddexp(0.0, -signed)))


def _golden(f, a: float, b: float, tol: float) -> float:
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_temperature_arrays(z, o, bounds: tuple[float, float] = DEFAULT_BOUNDS) -> TemperatureFit:
    z = np.asarray(z, dtype=np.float64)
    o = np.asarray(o, dtype=bool)
    if z.size == 0:
        raise EmptyInput("no records to fit a temperature on")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0 < lo < hi):
        raise NonPositiveTemperature(bounds)

    def f(t):
        return nll(z, o, t)

    grid = np.geomspace(lo, hi, GRID_POINTS)
    values = [f(t) for t in grid]
    i = int(np.argmin(values))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, GRID_POINTS - 1)]
    t_best = _golden(f, a, b, GOLDEN_TOL)
    best = f(t_best)
    # the objective can be monotone over the whole range; snap to the bound
    for edge in (lo, hi):
        v = f(edge)
        if v <= best:
            t_best, best = edge, v
    boundary_hit = t_best in (lo, hi)
    degenerate = bool((np.all(z > 0) or np.all(z < 0)) and (o.all() or not o.any()))
    if boundary_hit:
        log.warning("temperature fit hit the search bound %s (degenerate=%s)", t_best, degenerate)
    return TemperatureFit(
        temperature=float(t_best),
        nll_before=f(1.0),
        nll_after=float(best),
        n_validation=int(z.size),
        search_bounds=(lo, hi),
        boundary_hit=boundary_hit,
        degenerate=degenerate,
    )


def fit_temperature(records: Sequence, bounds: tuple[float, float] = DEFAULT_BOUNDS) -> TemperatureFit:
    """Fit T on records carrying ``logprob_yes``/``logprob_no`` and ``correct``."""
    records = list(records)
    z = np.array([r.log_odds for r in records], dtype=np.float64)
    o = np.array([r.correct for r in records], dtype=bool)
    return fit_temperature_arrays(z, o, bounds)


def apply_temperature(records: Sequence, t: float) -> list:
    if not t > 0:
        raise NonPositiveTemperature(t)
    return [replace(r, confidence=sigmoid(r.log_odds / t)) for r in records]


def split_validation(records: Sequence, val_size: int = 500, seed: int = 0) -> tuple[list, list]:
    """Seeded uniform sample of ``val_size`` records; the rest are for reporting.

    If there are not enough records for a disjoint remainder, half of them are
    used for validation.
    """
    records = list(records)
    n = len(records)
    if n < 2:
        return records, records
    if val_size >= n:
        val_size = n // 2
    idx = sorted(random.Random(seed).sample(range(n), val_size))
    chosen = set(idx)
    return [records[i] for i in idx], [r for i, r in enumerate(records) if i not in chosen]
