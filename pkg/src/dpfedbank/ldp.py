"""Local differential privacy for client updates.

Updates are clipped to L2 norm ``C`` so that any two clipped updates differ by
at most ``2C``; that bound is used as the sensitivity when calibrating the
Gaussian noise scale.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import BudgetExhausted


class Mode(str, Enum):
    ANALYTIC = "analytic"
    SIMPLE = "simple"
    # no perturbation and no budget charge; stands in for epsilon = infinity
    OFF = "off"


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 1.0
    delta: float = 1e-5
    clip_norm: float = 1.0
    mode: Mode = Mode.ANALYTIC

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    @property
    def sensitivity(self) -> float:
        return 2.0 * self.clip_norm


@dataclass(frozen=True)
class NoiseScale:
    sigma: float
    sensitivity: float

    def __post_init__(self):
        if self.sigma < 0 or self.sensitivity < 0:
            raise ValueError("sigma and sensitivity must be nonnegative")


def clip_update(delta: np.ndarray, clip_norm: float) -> tuple[np.ndarray, float]:
    """Scale ``delta`` down to L2 norm ``clip_norm`` if it exceeds it."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    delta = np.asarray(delta, dtype=np.float64)
    norm = float(np.linalg.norm(delta))
    if norm <= clip_norm:
        return delta.copy(), norm
    return delta * (clip_norm / norm), norm


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float | None = None) -> float:
    """Noise scale ``(sens/eps) * sqrt(2 ln(1.25/delta))``, or ``sens/eps`` when delta is None."""
    if delta is None:
        return sensitivity / epsilon
    return sensitivity / epsilon * math.sqrt(2.0 * math.log(1.25 / delta))


def calibrate_sigma(params: PrivacyParams) -> NoiseScale:
    sens = params.sensitivity
    if params.mode is Mode.OFF:
        return NoiseScale(0.0, sens)
    if params.mode is Mode.SIMPLE:
        return NoiseScale(gaussian_sigma(sens, params.epsilon), sens)
    return NoiseScale(gaussian_sigma(sens, params.epsilon, params.delta), sens)


def perturb(delta: np.ndarray, scale: NoiseScale, rng: np.random.Generator) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if scale.sigma == 0:
        return delta.copy()
    return delta + rng.normal(0.0, scale.sigma, size=delta.shape)


@dataclass
class PrivacyLedger:
    """Per-client cumulative (epsilon, delta) spend under basic composition.

    Charges are atomic: a charge that would push either total past its cap
    raises :class:`BudgetExhausted` and leaves the ledger untouched.
    """

    eps_budget: float
    delta_budget: float
    spent: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    # absorbs float rounding in long sums like 0.1 * 30
    SLACK = 1e-12

    def __post_init__(self):
        if not self.eps_budget > 0:
            raise ValueError("eps_budget must be positive")
        if not 0 < self.delta_budget < 1:
            raise ValueError("delta_budget must lie in (0, 1)")

    def enroll(self, client_id) -> None:
        with self._lock:
            self.spent.setdefault(client_id, (0.0, 0.0))

    def eps_spent(self, client_id) -> float:
        return self.spent.get(client_id, (0.0, 0.0))[0]

    def delta_spent(self, client_id) -> float:
        return self.spent.get(client_id, (0.0, 0.0))[1]

    def can_afford(self, client_id, eps: float, delta: float) -> bool:
        e, d = self.spent.get(client_id, (0.0, 0.0))
        return e + eps <= self.eps_budget + self.SLACK and d + delta <= self.delta_budget + self.SLACK

    def charge(self, client_id, eps: float, delta: float) -> None:
        if eps < 0 or delta < 0:
            raise ValueError("charges must be nonnegative")
        with self._lock:
            if not self.can_afford(client_id, eps, delta):
                raise BudgetExhausted(client_id)
            e, d = self.spent.get(client_id, (0.0, 0.0))
            self.spent[client_id] = (e + eps, d + delta)


def charge_budget(ledger: PrivacyLedger, client_id, eps: float, delta: float) -> PrivacyLedger:
    ledger.charge(client_id, eps, delta)
    return ledger


def estimate_loss_exceedance(
    sensitivity: float,
    sigma: float,
    epsilon: float,
    trials: int,
    rng: np.random.Generator,
    chunk: int = 1 << 18,
) -> float:
    """Monte Carlo estimate of Pr[privacy loss > epsilon] for the scalar Gaussian mechanism.

    For neighbours at distance ``sensitivity`` and noise ``Z ~ N(0, sigma^2)``
    the privacy loss is ``sens*Z/sigma^2 + sens^2/(2 sigma^2)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if trials < 100_000:
        raise ValueError("trials must be at least 1e5")
    hits = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        z = rng.normal(0.0, sigma, size=n)
        loss = sensitivity * z / sigma**2 + sensitivity**2 / (2 * sigma**2)
        hits += int(np.count_nonzero(loss > epsilon))
        done += n
    return hits / trials


def loss_exceedance_tail(sensitivity: float, sigma: float, epsilon: float) -> float:
    """Closed form of the same probability: upper normal tail at ``(eps - sens^2/2sigma^2) * sigma/sens``."""
    t = (epsilon - sensitivity**2 / (2 * sigma**2)) * sigma / sensitivity
    return 0.5 * math.erfc(t / math.sqrt(2.0))


def top_k_sparsify(delta: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` largest-magnitude entries; equal magnitudes favour lower indices."""
    delta = np.asarray(delta, dtype=np.float64)
    if not 1 <= k <= delta.size:
        raise ValueError(f"k must lie in [1, {delta.size}]")
    keep = np.argsort(-np.abs(delta), kind="stable")[:k]
    out = np.zeros_like(delta)
    out[keep] = delta[keep]
    return out


def quantize_uniform(delta: np.ndarray, bits: int, value_range: float) -> np.ndarray:
    """Clamp to ``[-R, R]`` and round to the nearest of ``2**bits`` evenly spaced levels.

    Halfway values round up.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if not value_range > 0:
        raise ValueError("range must be positive")
    levels = 2**bits - 1
    step = 2.0 * value_range / levels
    x = np.clip(np.asarray(delta, dtype=np.float64), -value_range, value_range)
    idx = np.clip(np.floor((x + value_range) / step + 0.5), 0, levels)
    return -value_range + idx * step
