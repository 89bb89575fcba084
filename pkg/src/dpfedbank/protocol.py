"""Round-by-round federation: selection, local training, LDP, transport,
verification, anomaly screening, aggregation and the global update.

Every random draw comes from a stream seeded by ``derive_seed(master, ...)``,
so client work depends only on the global model, the client's shard and its
own stream. That keeps results identical for any number of worker threads.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks
from .aggregation import AggregationRule, aggregate, apply_global_update
from .attacks import AttackSpec, TransportAdversary
from .config import ExperimentConfig
from .data import generate_population, partition_non_iid
from .defense import (
    AnomalyVerdict,
    Reason,
    UpdateStats,
    detect_anomalies,
    eligible_clients,
    update_trust,
    verify_envelope,
)
from .envelope import ClientUpdate, auth_tag, decode_vector, derive_client_key, encode_vector, payload_digest, seal
from .errors import BudgetExhausted, EmptyEligibleSet
from .ldp import Mode, PrivacyLedger, calibrate_sigma, clip_update, perturb, quantize_uniform, top_k_sparsify
from .model import DatasetShard, ModelSpec, evaluate, init_params, local_train

ADVERSARY_KEY = b"transport-adversary"


def derive_seed(master: int, *parts) -> int:
    """64-bit seed from the master seed and a label path, e.g. ``("client", 3, 7)``."""
    h = hashlib.sha256(struct.pack("<Q", master))
    for p in parts:
        h.update(b"\x00" + str(p).encode())
    return int.from_bytes(h.digest()[:8], "little")


def stream(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))


def select_clients(eligible, fraction: float, rng: np.random.Generator) -> set:
    """Sample ``ceil(fraction * |eligible|)`` clients uniformly without replacement."""
    pool = sorted(eligible)
    if not pool:
        raise EmptyEligibleSet("no eligible clients")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    k = min(len(pool), math.ceil(fraction * len(pool) - 1e-9))
    if k == len(pool):
        return set(pool)
    return {pool[i] for i in rng.choice(len(pool), size=k, replace=False)}


def transport_send(env: ClientUpdate, adv: TransportAdversary, rng: np.random.Generator,
                   previous: ClientUpdate | None = None) -> list[ClientUpdate]:
    """Pass one envelope through the adversarial channel.

    Returns the envelopes that arrive: empty when dropped, the (possibly
    altered) envelope otherwise, plus the client's previous envelope when
    replay is on.
    """
    dropped = rng.random() < adv.drop_prob
    if not adv.applies_to(env.client_id):
        return [env]
    out = []
    if not dropped:
        if adv.tamper_index is not None:
            env = env.with_payload_byte(adv.tamper_index, adv.tamper_byte)
        if adv.forge:
            vec = -decode_vector(env.payload)
            payload = encode_vector(vec)
            digest = payload_digest(payload)
            env = ClientUpdate(env.client_id, env.round, payload, env.eps_declared, env.pre_clip_norm,
                               digest, auth_tag(ADVERSARY_KEY, digest, env.round, env.client_id))
        out.append(env)
    if adv.replay and previous is not None:
        out.append(previous)
    return out


@dataclass
class World:
    """Everything fixed for the lifetime of one experiment."""

    cfg: ExperimentConfig
    spec: ModelSpec
    shards: dict
    eval_shard: DatasetShard
    keys: dict
    attack: AttackSpec
    adversary: TransportAdversary
    rule: AggregationRule

    @property
    def seed(self) -> int:
        return self.cfg.experiment.seed


@dataclass
class FederationState:
    round: int
    theta: np.ndarray
    ledger: PrivacyLedger
    trust: dict
    stats: UpdateStats = field(default_factory=UpdateStats)
    last_sent: dict = field(default_factory=dict)


@dataclass
class RoundRecord:
    round: int
    rule: str
    selected: list
    received: list
    verified: list
    flagged: list
    aggregated: list
    budget_excluded: list
    trust_excluded: list
    attackers: list
    rejected: dict
    update_norms: dict
    robust_z: dict
    eps_spent: dict
    trust: dict
    accuracy: float
    loss: float
    divisor: int
    empty: bool

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, dict):
                v = {str(c): v[c] for c in sorted(v)}
            out[k] = v
        return out


def build_world(cfg: ExperimentConfig) -> World:
    seed = cfg.experiment.seed
    spec = cfg.model_spec
    population = generate_population(cfg.population, derive_seed(seed, "population"))
    parts = partition_non_iid(population, cfg.partition, derive_seed(seed, "partition"))
    attack = cfg.attack_spec
    shards = {}
    for cid, shard in enumerate(parts):
        if attack.is_attacker(cid) and attack.kind in attacks.DATA_ATTACKS:
            shard = attacks.attack_shard(shard, attack, stream(seed, "poison", cid))
        shards[cid] = shard
    eval_pop = cfg.population.__class__(cfg.experiment.eval_size, cfg.population.d,
                                        cfg.population.class_sep, cfg.population.positive_frac)
    eval_shard = generate_population(eval_pop, derive_seed(seed, "eval"))
    keys = {cid: derive_client_key(seed, cid) for cid in shards}
    return World(cfg, spec, shards, eval_shard, keys, attack, cfg.transport.adversary, cfg.rule)


def initial_state(world: World) -> FederationState:
    cfg = world.cfg
    ledger = PrivacyLedger(cfg.privacy.eps_budget, cfg.privacy.delta_budget)
    for cid in world.shards:
        ledger.enroll(cid)
    trust = {cid: cfg.defense.initial_trust for cid in world.shards}
    return FederationState(0, init_params(world.spec), ledger, trust)


def _charge_for(world: World, cid: int) -> tuple[float, float]:
    """Privacy cost of one participation; zero for clients that skip the mechanism."""
    params = world.cfg.privacy.params_for(cid)
    if params.mode is Mode.OFF:
        return 0.0, 0.0
    if world.attack.is_attacker(cid) and world.attack.kind in attacks.UPDATE_ATTACKS:
        return 0.0, 0.0
    return params.epsilon, params.delta


def _compress(vec: np.ndarray, world: World) -> np.ndarray:
    comp = world.cfg.compression
    if comp.kind == "top_k":
        return top_k_sparsify(vec, comp.k)
    if comp.kind == "quantize":
        return quantize_uniform(vec, comp.bits, comp.range)
    return vec


def client_update(world: World, cid: int, theta: np.ndarray, round_: int) -> tuple[np.ndarray, float]:
    """One client's submission for this round: (vector, pre-clip norm).

    Honest clients train, clip, add calibrated noise and optionally compress.
    Model-poisoning clients skip the noise and send their attacked vector.
    """
    cfg = world.cfg
    rng = stream(world.seed, "client", cid, round_)
    attack = world.attack
    if attack.is_attacker(cid) and attack.kind == attacks.RANDOM_UPDATE:
        vec = attacks.random_update(world.spec.dimension, attack.sigma_a, rng)
        return vec, float(np.linalg.norm(vec))
    delta = local_train(theta, world.shards[cid], cfg.train, world.spec, rng)
    params = cfg.privacy.params_for(cid)
    clipped, pre_norm = clip_update(delta, params.clip_norm)
    if attack.is_attacker(cid) and attack.kind == attacks.SCALE_UPDATE:
        return attacks.scale_update(clipped, attack.factor), pre_norm
    noisy = perturb(clipped, calibrate_sigma(params), rng)
    return _compress(noisy, world), pre_norm


def _threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    try:
        return max(1, int(os.environ.get("DPFB_THREADS", "1")))
    except ValueError:
        return 1


def run_round(state: FederationState, world: World, threads: int | None = None) -> tuple[FederationState, RoundRecord]:
    """Advance the federation by one round; ``state`` is updated in place and returned."""
    cfg = world.cfg
    t = state.round
    ids = sorted(world.shards)

    # eligibility
    if cfg.defense.reputation:
        trusted = eligible_clients(state.trust, cfg.defense.theta_min)
    else:
        trusted = set(ids)
    trust_excluded = sorted(set(ids) - trusted)
    budget_excluded = sorted(c for c in trusted if not state.ledger.can_afford(c, *_charge_for(world, c)))
    eligible = trusted - set(budget_excluded)

    selected = select_clients(eligible, cfg.experiment.client_fraction, stream(world.seed, "select", t)) if eligible else set()
    order = sorted(selected)

    # local work, possibly in parallel; results come back in id order
    n_threads = _threads(threads)
    if n_threads > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(lambda c: client_update(world, c, state.theta, t), order))
    else:
        results = [client_update(world, c, state.theta, t) for c in order]

    envelopes = []
    budget_excluded = set(budget_excluded)
    for cid, (vec, pre_norm) in zip(order, results):
        eps, dlt = _charge_for(world, cid)
        try:
            state.ledger.charge(cid, eps, dlt)
        except BudgetExhausted:
            budget_excluded.add(cid)
            continue
        envelopes.append(seal(cid, t, vec, world.keys[cid], eps, pre_norm))

    # transport
    trng = stream(world.seed, "transport", t)
    delivered = []
    for env in envelopes:
        delivered.extend(transport_send(env, world.adversary, trng, state.last_sent.get(env.client_id)))
        state.last_sent[env.client_id] = env

    # verification: first valid envelope per client wins
    updates: dict = {}
    rejected: dict = {}
    for env in delivered:
        cid = env.client_id
        key = world.keys.get(cid)
        reason = Reason.AUTH_FAIL if key is None else verify_envelope(env, key, expected_round=t)
        vec = None
        if reason is Reason.NONE:
            try:
                vec = decode_vector(env.payload)
            except ValueError:
                reason = Reason.INTEGRITY_FAIL
            else:
                if vec.shape != (world.spec.dimension,) or not np.all(np.isfinite(vec)):
                    reason = Reason.INTEGRITY_FAIL
        if reason is Reason.NONE:
            updates.setdefault(cid, vec)
        else:
            rejected.setdefault(cid, []).append(reason.value)
    received = {env.client_id for env in delivered}
    failed = {c for c in rejected if c not in updates}

    norms = {c: float(np.linalg.norm(v)) for c, v in updates.items()}
    state.stats.record(norms)
    screened = detect_anomalies(updates, cfg.defense.tau)
    robust_z = {v.client_id: v.robust_z for v in screened}
    outliers = {v.client_id for v in screened if v.flagged} if cfg.defense.detect else set()
    flagged = outliers | failed

    # aggregation over verified, unflagged updates
    accepted = {c: updates[c] for c in sorted(updates) if c not in outliers}
    rule_used = str(world.rule)
    aggregated: list = []
    if accepted:
        rule = world.rule.fitted(len(accepted))
        rule_used = str(rule)
        outcome = aggregate(accepted, rule)
        state.theta = apply_global_update(state.theta, outcome.aggregate)
        aggregated = sorted(outcome.contributors)

    if cfg.defense.reputation:
        verdicts = [
            AnomalyVerdict(c, robust_z.get(c, 0.0),
                           Reason(rejected[c][0]) if c in failed
                           else Reason.NORM_OUTLIER if c in outliers else Reason.NONE)
            for c in sorted(received)
        ]
        state.trust = update_trust(state.trust, verdicts, cfg.defense.reward, cfg.defense.penalty)

    accuracy, loss = evaluate(state.theta, world.eval_shard, world.spec)
    record = RoundRecord(
        round=t,
        rule=rule_used,
        selected=order,
        received=sorted(received),
        verified=sorted(updates),
        flagged=sorted(flagged),
        aggregated=aggregated,
        budget_excluded=sorted(budget_excluded),
        trust_excluded=trust_excluded,
        attackers=[c for c in order if world.attack.is_attacker(c)],
        rejected=rejected,
        update_norms=norms,
        robust_z=robust_z,
        eps_spent={c: state.ledger.eps_spent(c) for c in ids},
        trust=dict(state.trust),
        accuracy=accuracy,
        loss=loss,
        divisor=len(aggregated),
        empty=not aggregated,
    )
    state.round = t + 1
    return state, record


def iter_experiment(cfg: ExperimentConfig, threads: int | None = None):
    world = build_world(cfg)
    state = initial_state(world)
    for _ in range(cfg.experiment.rounds):
        state, record = run_round(state, world, threads)
        yield record


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[RoundRecord]:
    return list(iter_experiment(cfg, threads))


def detection_rates(records) -> tuple[float, float]:
    """Pooled (TPR, FPR) of norm screening over all verified participations.

    NaN when there were no attacker (or no honest) participations.
    """
    tp = pos = fp = neg = 0
    for r in records:
        rec = r.to_dict() if isinstance(r, RoundRecord) else r
        attackers = set(rec["attackers"])
        flagged = set(rec["flagged"])
        for c in rec["verified"]:
            if c in attackers:
                pos += 1
                tp += c in flagged
            else:
                neg += 1
                fp += c in flagged
    return (tp / pos if pos else float("nan"), fp / neg if neg else float("nan"))


def summarize(records) -> dict:
    tpr, fpr = detection_rates(records)
    last = records[-1].to_dict() if records else None
    return {
        "summary": True,
        "rounds": len(records),
        "final_accuracy": last["accuracy"] if last else None,
        "final_loss": last["loss"] if last else None,
        "mean_tpr": None if math.isnan(tpr) else tpr,
        "mean_fpr": None if math.isnan(fpr) else fpr,
        "max_cumulative_eps": max(last["eps_spent"].values()) if last else 0.0,
        "empty_rounds": sum(1 for r in records if r.empty),
    }
