"""End-to-end acceptance checks.

Each test prints (and records for the terminal summary) one line of the form
``criterion N: PASS|FAIL <detail>`` before asserting.
"""
import itertools
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dpfedbank.aggregation import AggregationRule, aggregate, expected_agg_noise_variance, multi_krum
from dpfedbank.cli import main, render_jsonl
from dpfedbank.config import apply_overrides, from_dict, load_raw
from dpfedbank.defense import Reason, verify_envelope
from dpfedbank.envelope import derive_client_key, seal
from dpfedbank.ldp import PrivacyParams, calibrate_sigma, estimate_loss_exceedance, gaussian_sigma, loss_exceedance_tail
from dpfedbank.model import DatasetShard, ModelSpec, loss_and_grad
from dpfedbank.protocol import detection_rates, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = range(5)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def scenario(name: str, *overrides: str):
    return from_dict(apply_overrides(load_raw(CONFIGS / name), list(overrides)))


def final_accuracy(name: str, *overrides: str, seeds=SEEDS) -> list[float]:
    return [run_experiment(scenario(name, *overrides, f"experiment.seed={s}"))[-1].accuracy for s in seeds]


def test_criterion_01_calibration(capsys):
    assert main(["calibrate", "--clip", "0.5", "--epsilon", "1", "--delta", "1e-5"]) == 0
    printed = float(capsys.readouterr().out)
    sigma = calibrate_sigma(PrivacyParams(1.0, 1e-5, 0.5)).sigma
    simple_ok = all(gaussian_sigma(s, e) == s / e for s in (0.1, 1.0, 3.0) for e in (0.25, 0.5, 1.0, 7.0))
    ok = abs(printed - 4.84480) <= 1e-3 and abs(sigma - 4.84480) <= 1e-3 and simple_ok
    report(1, ok, f"cli sigma={printed}, library sigma={sigma:.6f}, simple mode exact={simple_ok}")


def test_criterion_02_noise_law():
    rng = np.random.default_rng(2)
    worst = 0.0
    for sigma, n in [(1, 4), (4, 16)]:
        noise = rng.normal(0.0, sigma, size=(10_000, n, 1))
        agg = np.array([aggregate({i: trial[i] for i in range(n)}, AggregationRule()).aggregate[0] for trial in noise])
        worst = max(worst, abs(agg.var() / expected_agg_noise_variance(sigma, n) - 1))
    report(2, worst <= 0.05, f"max relative variance error {worst:.4f}")


def test_criterion_03_empirical_dp():
    details, ok = [], True
    for eps, delta in itertools.product([0.5, 1.0], [0.05, 0.1]):
        sigma = calibrate_sigma(PrivacyParams(eps, delta, 0.5)).sigma
        est = estimate_loss_exceedance(1.0, sigma, eps, 1_000_000, np.random.default_rng(3))
        tail = loss_exceedance_tail(1.0, sigma, eps)
        ok &= est <= delta and abs(est - tail) <= 0.003
        details.append(f"(eps={eps}, delta={delta}): mc={est:.5f} tail={tail:.5f}")
    report(3, ok, "; ".join(details))


def test_criterion_04_gradient():
    rng = np.random.default_rng(4)
    worst = 0.0
    for case in range(100):
        d = int(rng.integers(1, 8))
        spec = ModelSpec.for_features(d, float(rng.choice([0.0, 0.01, 0.5])), bool(case % 2))
        n = int(rng.integers(1, 20))
        shard = DatasetShard(rng.normal(size=(n, d)), rng.integers(0, 2, n))
        theta = rng.normal(size=spec.dimension)
        _, grad = loss_and_grad(theta, shard, spec)
        h = 1e-6
        fd = np.array([
            (loss_and_grad(theta + h * e, shard, spec)[0] - loss_and_grad(theta - h * e, shard, spec)[0]) / (2 * h)
            for e in np.eye(spec.dimension)
        ])
        worst = max(worst, np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-12))
    report(4, worst <= 1e-4, f"max relative error {worst:.2e} over 100 cases")


def brute_multi_krum(updates: dict, f: int, m: int):
    ids = sorted(updates)
    n = len(ids)
    scores = {}
    for i in ids:
        others = [j for j in ids if j != i]
        scores[i] = min(
            sum(float(np.sum((updates[i] - updates[j]) ** 2)) for j in combo)
            for combo in itertools.combinations(others, n - f - 2)
        )
    chosen = sorted(sorted(ids, key=lambda c: (scores[c], c))[:m])
    return np.mean([updates[c] for c in chosen], axis=0), set(chosen)


def test_criterion_05_robust_aggregation():
    rng = np.random.default_rng(5)
    krum_ok = 0
    for _ in range(200):
        n, d = int(rng.integers(3, 8)), int(rng.integers(1, 4))
        f = int(rng.integers(0, n - 2))
        m = int(rng.integers(1, n - f + 1))
        # coarse grid values make exact score ties common
        ups = {i: rng.integers(-3, 4, size=d).astype(float) for i in range(n)}
        out = multi_krum(ups, f, m)
        ref, chosen = brute_multi_krum(ups, f, m)
        krum_ok += out.contributors == chosen and np.allclose(out.aggregate, ref, rtol=0, atol=1e-12)
    trim_ok = 0
    for _ in range(500):
        k = int(rng.integers(1, 4))
        n_adv = int(rng.integers(0, k + 1))
        honest = rng.normal(size=(int(rng.integers(2 * k + 1 - n_adv, 10)), int(rng.integers(1, 4))))
        adv = rng.choice([-1e9, 1e9], size=(n_adv, honest.shape[1]))
        ups = dict(enumerate(np.vstack([honest, adv])))
        agg = aggregate(ups, AggregationRule("trimmed_mean", trim=k)).aggregate
        trim_ok += bool(np.all(agg >= honest.min(axis=0)) and np.all(agg <= honest.max(axis=0)))
    report(5, krum_ok == 200 and trim_ok == 500, f"multi-krum {krum_ok}/200 match, trimmed mean {trim_ok}/500 bounded")


def test_criterion_06_clean_convergence():
    acc = final_accuracy("clean.toml", seeds=[0])[0]
    report(6, acc >= 0.95, f"final accuracy {acc:.3f} after 50 rounds")


def test_criterion_07_privacy_utility():
    means = {eps: float(np.mean(final_accuracy("privacy_utility.toml", f"privacy.epsilon={eps}")))
             for eps in (0.5, 2.0, 8.0)}
    vals = list(means.values())
    ok = all(a <= b for a, b in zip(vals, vals[1:])) and means[8.0] - means[0.5] >= 0.03
    report(7, ok, "mean accuracy " + ", ".join(f"eps={e}: {a:.3f}" for e, a in means.items()))


def test_criterion_08_poisoning_resilience():
    clean = float(np.mean(final_accuracy("poisoning.toml", 'attack.kind="none"')))
    mean_rule = float(np.mean(final_accuracy("poisoning.toml", 'aggregation.rule="mean"')))
    trimmed = float(np.mean(final_accuracy("poisoning.toml", 'aggregation.rule="trimmed_mean(3)"')))
    ok = clean - mean_rule >= 0.10 and abs(clean - trimmed) <= 0.05
    report(8, ok, f"clean={clean:.3f} mean={mean_rule:.3f} trimmed_mean(3)={trimmed:.3f}")


def test_criterion_09_anomaly_detection():
    rates = [detection_rates(run_experiment(scenario("detection.toml", f"experiment.seed={s}"))) for s in range(3)]
    tpr, fpr = min(r[0] for r in rates), max(r[1] for r in rates)
    report(9, tpr >= 0.9 and fpr <= 0.1, f"worst seed TPR={tpr:.3f} FPR={fpr:.3f} over 20 rounds")


def test_criterion_10_reputation_exclusion():
    cfg = scenario("detection.toml", "attack.attackers=[0]", "defense.reputation=true",
                   "defense.penalty=0.25", "defense.theta_min=0.2", "experiment.rounds=30")
    records = run_experiment(cfg)
    participations = [r for r in records if 0 in r.verified]
    always_flagged = all(0 in r.flagged for r in participations)
    flagged_rounds, fell_at = 0, None
    for r in records:
        flagged_rounds += 0 in r.flagged
        if r.trust[0] < 0.2:
            fell_at = r.round
            break
    later = [r for r in records if fell_at is not None and r.round > fell_at]
    never_back = all(0 not in r.aggregated and 0 in r.trust_excluded for r in later)
    ok = always_flagged and fell_at is not None and flagged_rounds <= 10 and never_back and len(later) > 0
    report(10, ok, f"below theta_min after {flagged_rounds} flagged rounds (round {fell_at}); "
                   f"absent from aggregation for the remaining {len(later)} rounds")


def test_criterion_11_budget_enforcement(tmp_path):
    out = tmp_path / "budget.jsonl"
    args = ["run", "--config", str(CONFIGS / "example.toml"), "--out", str(out),
            "--set", "privacy.eps_budget=3.0", "--set", "privacy.epsilon=0.5",
            "--set", "experiment.rounds=10", "--set", "defense.reputation=false", "--set", "defense.detect=false"]
    assert main(args) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()[:-1]]
    rounds_in = [r["round"] for r in records if 0 in r["selected"]]
    replayed = 0.5 * len(rounds_in)
    ok = (rounds_in == list(range(6)) and 0 in records[6]["budget_excluded"]
          and records[-1]["eps_spent"]["0"] == 3.0 and replayed == 3.0)
    report(11, ok, f"client 0 participated in rounds {rounds_in}, excluded in round 6: "
                   f"{0 in records[6]['budget_excluded']}, cumulative eps {records[-1]['eps_spent']['0']}")


def test_criterion_12_integrity_auth_replay():
    base = ["experiment.rounds=3", "defense.reputation=false"]
    tampered = run_experiment(scenario("example.toml", *base, "transport.tamper_index=12",
                                       "transport.tamper_byte=255", "transport.targets=[3]"))
    tamper_ok = all(r.rejected.get(3) == [Reason.INTEGRITY_FAIL.value] and 3 not in r.aggregated
                    and not r.empty for r in tampered)

    key, other = derive_client_key(0, 1), derive_client_key(0, 2)
    env = seal(1, 0, np.arange(4.0), key)
    forged = run_experiment(scenario("example.toml", *base, "transport.forge=true", "transport.targets=[5]"))
    auth_ok = (verify_envelope(env, other) is Reason.AUTH_FAIL
               and all(r.rejected.get(5) == [Reason.AUTH_FAIL.value] and 5 not in r.aggregated for r in forged))

    replayed = run_experiment(scenario("example.toml", *base, "transport.replay=true"))
    replay_ok = all(
        all(r.rejected.get(c) == [Reason.AUTH_FAIL.value] for c in r.selected) for r in replayed[1:]
    ) and verify_envelope(env, key, expected_round=1) is Reason.AUTH_FAIL

    rng = np.random.default_rng(12)
    payload_env = seal(7, 4, rng.normal(size=11), key)
    caught = 0
    for bit in rng.integers(0, len(payload_env.payload) * 8, 1000):
        byte, off = divmod(int(bit), 8)
        bad = payload_env.with_payload_byte(byte, payload_env.payload[byte] ^ (1 << off))
        caught += verify_envelope(bad, key) is Reason.INTEGRITY_FAIL
    report(12, tamper_ok and auth_ok and replay_ok and caught == 1000,
           f"tamper={tamper_ok} wrong key/forge={auth_ok} replay={replay_ok} bit flips caught {caught}/1000")


def test_criterion_13_determinism():
    cfg = scenario("detection.toml", "experiment.rounds=8", "transport.drop_prob=0.2",
                   "defense.reputation=true", "aggregation.rule=\"multi_krum(2,5)\"")
    outputs = [render_jsonl(cfg, threads=t) for t in (1, 1, 4, 4)]
    same = len({o.encode() for o in outputs}) == 1
    report(13, same, f"{len(outputs)} runs over thread counts (1, 4), {len(outputs[0])} bytes each, identical={same}")
