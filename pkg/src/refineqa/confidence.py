"""Confidence scoring over an answer's token probabilities.

Three metrics are supported:

* ``min_token_prob`` -- the minimum probability across the answer tokens,
  a conservative score: the least confident token marks the likeliest
  failure point. This is the canonical metric.
* ``sequence_prob`` -- the product of the token probabilities (the
  generation probability of the whole sequence).
* ``inverse_perplexity`` -- the geometric mean of the token probabilities,
  i.e. exp of the mean log-probability (1/PPL).

All three map a non-empty list of probabilities in (0, 1] to a value in
(0, 1], and coincide on single-token answers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import EmptyTokenList, OutOfRangeProb


class ConfidenceMetric(str, Enum):
    MIN_TOKEN_PROB = "min_token_prob"
    SEQUENCE_PROB = "sequence_prob"
    INVERSE_PERPLEXITY = "inverse_perplexity"


@dataclass(frozen=True)
class ConfidenceScore:
    """A scalar confidence in (0, 1] plus how it was computed."""

    value: float
    metric: ConfidenceMetric
    token_count: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "metric": self.metric.value,
            "token_count": self.token_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConfidenceScore":
        return cls(
            value=float(d["value"]),
            metric=ConfidenceMetric(d["metric"]),
            token_count=int(d["token_count"]),
        )


def score(probs: Sequence[float], metric: ConfidenceMetric) -> ConfidenceScore:
    """Score a token-probability list under the given metric.

    Raises EmptyTokenList for an empty list and OutOfRangeProb when any
    element (or a degenerate underflowed result) leaves (0, 1]. Values are
    never clamped.
    """
    if len(probs) == 0:
        raise EmptyTokenList("cannot score an empty token list")
    for p in probs:
        if not (0.0 < p <= 1.0):
            raise OutOfRangeProb(f"token probability {p!r} outside (0, 1]")

    n = len(probs)
    if metric is ConfidenceMetric.MIN_TOKEN_PROB:
        value = min(probs)
    elif metric is ConfidenceMetric.SEQUENCE_PROB:
        value = math.prod(probs)
    elif metric is ConfidenceMetric.INVERSE_PERPLEXITY:
        value = math.exp(math.fsum(math.log(p) for p in probs) / n)
    else:
        raise ValueError(f"unknown metric {metric!r}")

    if value <= 0.0:
        # Only reachable via float underflow on pathologically long or
        # low-probability sequences; surfaced rather than clamped.
        raise OutOfRangeProb(f"{metric.value} underflowed to {value!r} over {n} tokens")
    return ConfidenceScore(value=value, metric=metric, token_count=n)
