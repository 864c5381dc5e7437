"""Closed-form statistical rate formulas for reporting and comparison.

All rates are evaluated with unit absolute constants, so only ratios
between configurations are meaningful, never absolute predicted errors.
Values are capped at one since the subspace distance cannot exceed it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class RateInputs:
    """Problem-size summary feeding the rate formulas."""

    d: int
    k: int
    M: int
    N: int
    lambda1: float
    lambdak: float
    S_size: int | None = None
    beta: list[float] | None = None

    def __post_init__(self):
        if self.N < self.M:
            raise ValueError("total sample count must be at least the source count")
        if self.lambdak <= 0.0 or self.lambda1 < self.lambdak:
            raise ValueError("need lambda1 >= lambdak > 0")


def sota_upper_general(inputs: RateInputs) -> float:
    """General-case upper rate: spectrum-weighted dimension term plus the
    source-count term, capped at one."""
    t1 = math.sqrt(inputs.d * inputs.lambda1 / (inputs.N * inputs.lambdak ** 2))
    t2 = math.sqrt(inputs.M * inputs.d / (inputs.N ** 2 * inputs.lambdak ** 2))
    return min(1.0, t1 + t2)


def sota_lower_general(inputs: RateInputs) -> float:
    """General-case lower rate; the first term is clamped at one."""
    t1 = min(1.0, math.sqrt(inputs.d / (inputs.N * inputs.lambdak)))
    t2 = math.sqrt(inputs.M * inputs.d / (inputs.N ** 2 * inputs.lambdak ** 2))
    return min(1.0, t1 + t2)


def genie_balanced_upper(inputs: RateInputs) -> float:
    """Upper rate after balancing to the smallest head share.

    Uses the smallest entry of ``beta`` (the per-direction data shares) and
    the retained subset size.
    """
    if inputs.beta is None or inputs.S_size is None:
        raise ValueError("balanced rate needs the data shares and the subset size")
    beta_k = min(inputs.beta)
    if beta_k <= 0.0:
        raise ValueError("data shares must be positive")
    t1 = math.sqrt(inputs.d / (inputs.N * beta_k))
    t2 = math.sqrt(inputs.S_size * inputs.d / (inputs.N ** 2 * beta_k ** 2))
    return t1 + t2
