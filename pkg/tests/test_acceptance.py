"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v`` (or
``python tests/test_acceptance.py``).
"""

import json
import math
import time

import numpy as np
import pytest

from erasurenet import _pysim
from erasurenet.harness import growth_slope, main
from erasurenet.lyapunov import build_coefficients, expected_drift, lemma_threshold, scan_positive_drift
from erasurenet.markov import solve_stationary_truncated, state_from_buffers
from erasurenet.protocol import SimConfig, run
from erasurenet.rng import substream
from erasurenet.topology import (
    builtin_config_path,
    cut_capacity,
    expand_correlated,
    fig4_topology,
    insert_feedback_delay_chain,
    load_topology,
    min_cut,
    random_topology,
    subset_identity_check,
)

FIG4 = str(builtin_config_path("fig4"))
SINGLE = str(builtin_config_path("single_relay"))


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return report


def test_criterion_1_cut_set(verdict):
    topo = fig4_topology()
    min_cut(topo)
    t0 = time.perf_counter()
    cap, mask = min_cut(topo)
    elapsed = time.perf_counter() - t0
    others = {0b00: 0.7, 0b01: 1.4, 0b11: 1.0}
    err = max(abs(cut_capacity(topo, s) - c) for s, c in others.items())
    ok = cap == 0.5 and mask == 0b10 and err < 1e-12 and elapsed < 1e-3
    verdict("1 cut-set", ok, f"min-cut {cap} at mask {mask}, other cuts err {err:.1e}, {elapsed * 1e3:.3f} ms")


def test_criterion_2_identities(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    worst_corr = 0.0
    for _ in range(100):
        n = int(rng.integers(0, 7))
        topo = random_topology(n, rng)
        for i in range(n + 1):
            s1 = int(rng.integers(0, 1 << n)) if n else 0
            if i:
                s1 |= 1 << (i - 1)
            worst = max(worst, subset_identity_check(topo, i, s1))
        corr = expand_correlated(topo)
        for s in range(1 << n):
            worst_corr = max(worst_corr, abs(cut_capacity(topo, s) - cut_capacity(corr, s)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and worst_corr < 1e-12 and elapsed < 5
    verdict("2 identities", ok, f"residual {worst:.1e}, correlated gap {worst_corr:.1e}, {elapsed:.2f} s")


def test_criterion_3_fig4(verdict):
    t0 = time.perf_counter()
    res = run(fig4_topology(), SimConfig(timing="slotted", arrival_rate=0.45, horizon=1500, trials=500))
    elapsed = time.perf_counter() - t0
    window = res.aggregate.mean[-500:]
    s, r1, r2 = window.mean(axis=0)
    halves = window[:250].mean(axis=0), window[250:].mean(axis=0)
    drift = np.abs(halves[1] - halves[0]) / halves[0]
    ok = s >= r2 >= r1 and bool(np.all(drift <= 0.10)) and elapsed < 120
    verdict("3 fig4", ok, f"final-window means s={s:.3f} 2={r2:.3f} 1={r1:.3f}, "
            f"half-window change {np.round(drift, 3).tolist()}, {elapsed:.1f} s")


def test_criterion_4_dichotomy(verdict):
    t0 = time.perf_counter()
    topo = fig4_topology()
    slopes = {}
    for lam in (0.40, 0.45, 0.55, 0.60):
        res = run(topo, SimConfig(timing="slotted", arrival_rate=lam, horizon=20_000, trials=20))
        slopes[lam] = growth_slope(res.aggregate.times, res.aggregate.mean[:, 0])
    elapsed = time.perf_counter() - t0
    ok = all(slopes[x] < 0.005 for x in (0.40, 0.45))
    ok &= all(abs(slopes[x] - (x - 0.5)) <= 0.3 * (x - 0.5) for x in (0.55, 0.60))
    ok &= elapsed < 600
    verdict("4 dichotomy", ok, ", ".join(f"{k}: {v:.5f}" for k, v in slopes.items()) + f", {elapsed:.1f} s")


def test_criterion_5_state_equivalence(verdict):
    rng = np.random.default_rng(5)
    mismatches = 0
    checked = 0
    for k in range(50):
        if k == 0:
            topo = fig4_topology()
        elif k == 1:
            topo = load_topology(SINGLE)
        else:
            topo = random_topology(int(rng.integers(1, 3)), rng, density=0.8)
        lam = float(rng.uniform(0.2, 0.9))

        def hook(world):
            nonlocal mismatches, checked
            checked += 1
            if tuple(world.state) != state_from_buffers(world.buffers):
                mismatches += 1

        res = _pysim.simulate_async(_pysim.compile_net(topo), lam, math.inf, 1e300, substream(100 + k),
                                    max_events=10_000, on_event=hook)
        assert res["events"] == 10_000
    verdict("5 state equivalence", mismatches == 0, f"{mismatches} mismatches over {checked} events")


def test_criterion_6_ctmc_oracle(verdict):
    t0 = time.perf_counter()
    topo = load_topology(SINGLE).with_arrival_rate(0.3)
    exact = solve_stationary_truncated(topo, 80).mean_queue
    res = run(topo, SimConfig(timing="async", horizon=1e6, sample_interval=1000.0))
    sim = res.traces[0].mean_queue
    err = [abs(a - b) / b for a, b in zip(sim, exact)]
    elapsed = time.perf_counter() - t0
    ok = max(err) <= 0.05 and elapsed < 300
    verdict("6 ctmc oracle", ok, f"simulated {np.round(sim, 4).tolist()} vs stationary "
            f"{np.round(exact, 4).tolist()}, rel err {np.round(err, 4).tolist()}, {elapsed:.1f} s")


def test_criterion_7_drift_interior(verdict):
    topo = load_topology(SINGLE)
    params = build_coefficients(1, 100, 0.01)
    lam = 0.9 * lemma_threshold(topo, 100, 0.01)
    region = scan_positive_drift(topo, params, lam, 300, mode="exhaustive")
    verdict("7a drift interior (box 300)", region.interior,
            f"lambda {lam:.5f}, {region.positive_drift_count} positive-drift states, "
            f"bounding box {region.bounding_box}, verdict {region.verdict}")


def test_criterion_7_drift_boundary(verdict):
    topo = load_topology(SINGLE)
    params = build_coefficients(1, 100, 0.01)
    lam = 1.2 * min_cut(topo)[0]
    region = scan_positive_drift(topo, params, lam, 300, mode="exhaustive")
    verdict("7b drift boundary", not region.interior,
            f"lambda {lam:.3f}, bounding box {region.bounding_box}, verdict {region.verdict}")


def test_criterion_7_drift_brute_force(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    params = {n: build_coefficients(n, 100, 0.01) for n in (1, 2)}
    worst = 0.0
    sign_errors = 0
    for _ in range(1000):
        n = int(rng.integers(1, 3))
        topo = random_topology(n, rng, density=0.8, arrival_rate=float(rng.uniform(0, 1)))
        state = tuple(int(x) for x in rng.integers(0, 60, 1 << n))
        a = expected_drift(topo, params[n], state)
        b = expected_drift(topo, params[n], state, brute_force=True)
        if a.sign != b.sign:
            sign_errors += 1
        elif a.sign:
            worst = max(worst, abs(math.expm1(a.log_abs - b.log_abs)))
    elapsed = time.perf_counter() - t0
    ok = sign_errors == 0 and worst < 1e-9 and elapsed < 120
    verdict("7c drift brute force", ok, f"max rel err {worst:.1e}, sign errors {sign_errors}, {elapsed:.1f} s")


def test_criterion_8_delay_chain(verdict):
    t0 = time.perf_counter()
    topo = fig4_topology()
    base = min_cut(topo)[0]
    parts = []
    ok = True
    for delay in (1, 3, 5):
        cap = min_cut(insert_feedback_delay_chain(topo, delay))[0]
        res = run(topo, SimConfig(timing="slotted", arrival_rate=0.45, horizon=20_000, trials=20,
                                  feedback_delay=delay))
        slope = growth_slope(res.aggregate.times, res.aggregate.mean[:, 0])
        ok &= abs(cap - base) < 1e-12 and slope < 0.005
        parts.append(f"D={delay}: min-cut {cap:.3f} slope {slope:.5f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    verdict("8 delay chain", ok, "; ".join(parts) + f", {elapsed:.1f} s")


RERUNS = [
    ["analyze-cuts", "--config", FIG4, "--delay", "2"],
    ["simulate", "--config", FIG4, "--slots", "1500", "--trials", "5"],
    ["simulate", "--config", FIG4, "--timing", "async", "--horizon", "500", "--trials", "3"],
    ["reproduce-fig4", "--trials", "20"],
    ["sweep", "--config", FIG4, "--lambdas", "0.4,0.55", "--slots", "2000", "--trials", "3", "--jobs", "3"],
    ["drift-scan", "--config", SINGLE, "--threshold-frac", "0.9", "--box", "200", "--scan-mode", "sampled"],
    ["stationary", "--config", SINGLE, "--lambda", "0.2", "--cap", "15"],
]


def test_criterion_9_determinism(verdict, tmp_path):
    differ = []
    for k, args in enumerate(RERUNS):
        outs = []
        for rep in "ab":
            out = tmp_path / f"{k}{rep}"
            main([*args, "--seed", "1234", "--out", str(out)])
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1] or not outs[0]:
            differ.append(args[0])
    verdict("9 determinism", not differ,
            f"{len(RERUNS)} commands rerun, differing: {differ or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
