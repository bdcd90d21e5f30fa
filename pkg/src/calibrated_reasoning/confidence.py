"""Verbalized confidence from the yes/no token log-probabilities.

The model is asked whether its own answer is correct; the confidence is the
probability mass on "yes" renormalised over {yes, no}. That ratio equals the
logistic function of the log-odds, which is how it is evaluated here so that
token log-probabilities far below -700 do not underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput


@dataclass(frozen=True)
class ConfidenceQuery:
    logprob_yes: float
    logprob_no: float

    def __post_init__(self):
        if not (math.isfinite(self.logprob_yes) and math.isfinite(self.logprob_no)):
            raise NonFiniteInput(
                f"log-probabilities must be finite, got {self.logprob_yes!r}, {self.logprob_no!r}"
            )

    @property
    def log_odds(self) -> float:
        return self.logprob_yes - self.logprob_no


def sigmoid(x: float) -> float:
    """Logistic function, branch-split so neither side overflows."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def verbalized_confidence(q: ConfidenceQuery | float, logprob_no: float | None = None) -> float:
    """P(yes) / (P(yes) + P(no)), computed as sigmoid(logprob_yes - logprob_no).

    Accepts either a :class:`ConfidenceQuery` or the two log-probabilities as
    positional floats.
    """
    if not isinstance(q, ConfidenceQuery):
        q = ConfidenceQuery(float(q), float(logprob_no))
    return sigmoid(q.log_odds)


def logprobs_from_log_odds(z: float) -> tuple[float, float]:
    """A (logprob_yes, logprob_no) pair, both <= 0, whose difference is ``z``.

    Used by synthetic generators: the pair is the log of a proper two-way
    distribution, log sigmoid(z) and log sigmoid(-z).
    """
    ly = -float(np.logaddexp(0.0, -z))
    ln = -float(np.logaddexp(0.0, z))
    return ly, ln
