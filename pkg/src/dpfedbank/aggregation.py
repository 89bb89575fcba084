"""Server-side aggregation of client updates.

Updates arrive as ``{client_id: vector}``. Every rule processes clients in
ascending id order, so results never depend on dict insertion order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, EmptyUpdateSet, RuleInfeasible

MEAN = "mean"
MEDIAN = "median"
TRIMMED_MEAN = "trimmed_mean"
MULTI_KRUM = "multi_krum"

_ALIASES = {
    "mean": MEAN,
    "fedavg": MEAN,
    "median": MEDIAN,
    "coordmedian": MEDIAN,
    "coord_median": MEDIAN,
    "trimmed_mean": TRIMMED_MEAN,
    "trimmedmean": TRIMMED_MEAN,
    "multi_krum": MULTI_KRUM,
    "multikrum": MULTI_KRUM,
}
_RULE_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\(\s*([^)]*)\))?\s*$")


@dataclass(frozen=True)
class AggregationRule:
    kind: str = MEAN
    trim: int = 0
    f: int = 0
    m: int = 1

    def __post_init__(self):
        if self.kind not in (MEAN, MEDIAN, TRIMMED_MEAN, MULTI_KRUM):
            raise ValueError(f"unknown aggregation rule {self.kind!r}")
        if self.trim < 0 or self.f < 0 or self.m < 1:
            raise ValueError("trim and f must be >= 0, m must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "AggregationRule":
        """Parse ``mean``, ``median``, ``trimmed_mean(k)`` or ``multi_krum(f, m)``.

        CamelCase spellings such as ``TrimmedMean(2)`` are accepted too.
        """
        match = _RULE_RE.match(text)
        if not match:
            raise ValueError(f"cannot parse aggregation rule {text!r}")
        name = _ALIASES.get(match.group(1).lower())
        if name is None:
            raise ValueError(f"unknown aggregation rule {match.group(1)!r}")
        args = [int(a) for a in match.group(2).split(",")] if match.group(2) else []
        if name in (MEAN, MEDIAN):
            if args:
                raise ValueError(f"{name} takes no arguments")
            return cls(name)
        if name == TRIMMED_MEAN:
            if len(args) != 1:
                raise ValueError("trimmed_mean takes exactly one argument")
            return cls(name, trim=args[0])
        if len(args) != 2:
            raise ValueError("multi_krum takes two arguments (f, m)")
        return cls(name, f=args[0], m=args[1])

    def __str__(self):
        if self.kind == TRIMMED_MEAN:
            return f"trimmed_mean({self.trim})"
        if self.kind == MULTI_KRUM:
            return f"multi_krum({self.f},{self.m})"
        return self.kind

    def check(self, n: int) -> None:
        if self.kind == TRIMMED_MEAN and not 2 * self.trim < n:
            raise RuleInfeasible(f"trimmed_mean({self.trim}) needs more than {2 * self.trim} updates, got {n}")
        if self.kind == MULTI_KRUM:
            if n - self.f - 2 < 1:
                raise RuleInfeasible(f"multi_krum needs N - f - 2 >= 1 (N={n}, f={self.f})")
            if not 1 <= self.m <= n - self.f:
                raise RuleInfeasible(f"multi_krum needs 1 <= m <= N - f (N={n}, f={self.f}, m={self.m})")

    def fitted(self, n: int) -> "AggregationRule":
        """The closest feasible variant of this rule for ``n`` updates.

        Trim counts and assumed attacker counts shrink to the largest feasible
        value; Multi-Krum below three updates degrades to the mean.
        """
        if self.kind == TRIMMED_MEAN:
            return AggregationRule(TRIMMED_MEAN, trim=min(self.trim, (n - 1) // 2))
        if self.kind == MULTI_KRUM:
            if n < 3:
                return AggregationRule(MEAN)
            f = min(self.f, n - 3)
            return AggregationRule(MULTI_KRUM, f=f, m=min(self.m, n - f))
        return self


@dataclass(frozen=True)
class AggregationOutcome:
    aggregate: np.ndarray
    contributors: frozenset
    rejected: frozenset


def _stack(updates: Mapping) -> tuple[list, np.ndarray]:
    if not updates:
        raise EmptyUpdateSet("no updates to aggregate")
    ids = sorted(updates)
    vecs = [np.asarray(updates[c], dtype=np.float64) for c in ids]
    shape = vecs[0].shape
    if len(shape) != 1 or any(v.shape != shape for v in vecs):
        raise DimensionMismatch("all updates must be vectors of equal length")
    return ids, np.stack(vecs)


def aggregate(updates: Mapping, rule: AggregationRule) -> AggregationOutcome:
    ids, mat = _stack(updates)
    rule.check(len(ids))
    if rule.kind == MULTI_KRUM:
        return multi_krum(updates, rule.f, rule.m)
    if rule.kind == MEAN or (rule.kind == TRIMMED_MEAN and rule.trim == 0):
        agg = mat.mean(axis=0)
    elif rule.kind == MEDIAN:
        agg = np.median(mat, axis=0)
    else:
        srt = np.sort(mat, axis=0)
        agg = srt[rule.trim:len(ids) - rule.trim].mean(axis=0)
    return AggregationOutcome(agg, frozenset(ids), frozenset())


def krum_scores(mat: np.ndarray, f: int) -> np.ndarray:
    """Sum of squared distances from each row to its ``N - f - 2`` nearest other rows."""
    n = mat.shape[0]
    diff = mat[:, None, :] - mat[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[:n - f - 2].sum()
    return scores


def multi_krum(updates: Mapping, f: int, m: int) -> AggregationOutcome:
    ids, mat = _stack(updates)
    AggregationRule(MULTI_KRUM, f=f, m=m).check(len(ids))
    scores = krum_scores(mat, f)
    order = sorted(range(len(ids)), key=lambda i: (scores[i], ids[i]))
    chosen = sorted(order[:m])
    selected = frozenset(ids[i] for i in chosen)
    return AggregationOutcome(mat[chosen].mean(axis=0), selected, frozenset(ids) - selected)


def apply_global_update(theta: np.ndarray, agg: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    agg = np.asarray(agg, dtype=np.float64)
    if theta.shape != agg.shape:
        raise DimensionMismatch(f"cannot add update of shape {agg.shape} to parameters of shape {theta.shape}")
    return theta + agg


def expected_agg_noise_variance(sigma: float, n: int) -> float:
    """Per-coordinate variance of the mean of ``n`` independent N(0, sigma^2) noise draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return sigma**2 / n
