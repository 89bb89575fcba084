"""Server-side defences: norm anomaly detection, trust scores, envelope checks."""
from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .envelope import ClientUpdate, auth_tag, payload_digest

MAD_CONSISTENCY = 0.6745
SPREAD_FLOOR = 1e-9


class Reason(str, Enum):
    NONE = "none"
    NORM_OUTLIER = "norm_outlier"
    INTEGRITY_FAIL = "integrity_fail"
    AUTH_FAIL = "auth_fail"


@dataclass(frozen=True)
class AnomalyVerdict:
    client_id: int
    robust_z: float
    reason: Reason = Reason.NONE

    @property
    def flagged(self) -> bool:
        return self.reason is not Reason.NONE


@dataclass
class UpdateStats:
    """Append-only history of per-round update norms with their median and MAD."""

    norms: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    spreads: list = field(default_factory=list)

    def record(self, norms: Mapping) -> None:
        values = np.array([norms[c] for c in sorted(norms)], dtype=np.float64)
        self.norms.append(dict(norms))
        if values.size:
            center = float(np.median(values))
            self.centers.append(center)
            self.spreads.append(float(np.median(np.abs(values - center))))
        else:
            self.centers.append(float("nan"))
            self.spreads.append(float("nan"))


def robust_z_scores(norms: np.ndarray) -> np.ndarray:
    center = np.median(norms)
    spread = np.median(np.abs(norms - center))
    return MAD_CONSISTENCY * np.abs(norms - center) / max(spread, SPREAD_FLOOR)


def detect_anomalies(updates: Mapping, tau: float = 3.0) -> list[AnomalyVerdict]:
    """Flag updates whose L2 norm has robust z-score above ``tau``.

    With fewer than three updates there is nothing to compare against and
    every verdict is clean with a z-score of 0.
    """
    ids = sorted(updates)
    if len(ids) < 3:
        return [AnomalyVerdict(c, 0.0) for c in ids]
    norms = np.array([np.linalg.norm(updates[c]) for c in ids])
    z = robust_z_scores(norms)
    return [
        AnomalyVerdict(c, float(zc), Reason.NORM_OUTLIER if zc > tau else Reason.NONE)
        for c, zc in zip(ids, z)
    ]


def update_trust(scores: Mapping, verdicts, reward: float = 0.05, penalty: float = 0.25) -> dict:
    """Raise clean clients by ``reward`` and lower flagged ones by ``penalty``, clamped to [0, 1].

    Clients without a verdict keep their score.
    """
    if reward < 0 or penalty < 0:
        raise ValueError("reward and penalty must be nonnegative")
    out = dict(scores)
    for v in verdicts:
        s = out[v.client_id]
        out[v.client_id] = max(0.0, s - penalty) if v.flagged else min(1.0, s + reward)
    return out


def eligible_clients(scores: Mapping, theta_min: float) -> set:
    return {c for c, s in scores.items() if s >= theta_min}


def verify_envelope(env: ClientUpdate, key: bytes, expected_round: int | None = None) -> Reason:
    """Check payload digest, then the keyed tag.

    When ``expected_round`` is given the tag is recomputed for that round
    instead of the round the envelope claims, which rejects replays.
    """
    if not hmac.compare_digest(payload_digest(env.payload), env.digest):
        return Reason.INTEGRITY_FAIL
    round_ = env.round if expected_round is None else expected_round
    if not hmac.compare_digest(auth_tag(key, env.digest, round_, env.client_id), env.auth_tag):
        return Reason.AUTH_FAIL
    return Reason.NONE
