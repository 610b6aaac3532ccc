import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erasurenet.markov import (
    ADVANCE,
    ARRIVAL,
    DEPARTURE,
    ProtocolViolation,
    Transition,
    TruncationWarning,
    _outcome_probs,
    apply_transition,
    enumerate_transitions,
    queue_length,
    queue_lengths,
    solve_stationary_truncated,
    state_from_buffers,
    total_exit_rate,
)
from erasurenet.topology import expand_correlated, random_topology

from conftest import one_relay


def test_queue_lengths_examples():
    assert queue_lengths((3, 1, 0, 2)) == [6, 3, 2]
    assert queue_length((3, 1, 0, 2), 3) == 0  # destination
    assert queue_lengths((0, 0, 0, 0)) == [0, 0, 0]
    assert queue_lengths((4, 5)) == [9, 5]
    with pytest.raises(ValueError):
        queue_lengths((1, 2, 3))


def fig3_rates(e_s1, e_sd, e_1d, lam, m0, m1):
    """The four n=1 rates written out by hand."""
    q = m0 + m1
    return {
        (ARRIVAL, -1, -1): lam,
        (DEPARTURE, 0, -1): (1 - e_sd) * m0 / q,
        (DEPARTURE, 1, -1): (1 - e_1d) + (1 - e_sd) * m1 / q,
        (ADVANCE, 0, 1): (1 - e_s1) * e_sd * m0 / q,
    }


def as_dict(transitions):
    return {(t.kind, t.src, t.dst): t.rate for t in transitions}


def test_fig3_example():
    topo = one_relay(0.5, 0.5, 0.5, lam=0.3)
    got = as_dict(enumerate_transitions(topo, (2, 3)))
    want = fig3_rates(0.5, 0.5, 0.5, 0.3, 2, 3)
    assert got.keys() == want.keys()
    for k in want:
        assert got[k] == pytest.approx(want[k], rel=1e-14)


def test_fig3_rates_at_random_points():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        e_s1, e_sd, e_1d = rng.uniform(0.01, 0.99, 3)
        lam = rng.uniform(0.01, 1)
        m0, m1 = (int(x) for x in rng.integers(1, 50, 2))
        got = as_dict(enumerate_transitions(one_relay(e_s1, e_sd, e_1d, lam), (m0, m1)))
        want = fig3_rates(e_s1, e_sd, e_1d, lam, m0, m1)
        assert got.keys() == want.keys()
        for k in want:
            assert abs(got[k] - want[k]) <= 1e-12 * max(1.0, abs(want[k]))


def test_transition_edge_cases():
    topo = one_relay(0.5, 0.5, 0.5, lam=0.3)
    assert as_dict(enumerate_transitions(topo, (0, 0))) == {(ARRIVAL, -1, -1): 0.3}
    got = as_dict(enumerate_transitions(topo, (0, 4)))
    assert got == {(ARRIVAL, -1, -1): 0.3, (DEPARTURE, 1, -1): pytest.approx(1.0)}
    assert total_exit_rate(topo, (0, 0)) == pytest.approx(0.3)
    assert total_exit_rate(topo, (3, 0)) == pytest.approx(0.3 + 0.5 + 0.5 * 0.5)
    with pytest.raises(ValueError):
        enumerate_transitions(topo, (1, 0, 0, 0))


def test_apply_transition_examples():
    assert apply_transition((2, 3), Transition(ADVANCE, 1.0, 0, 1)) == (1, 4)
    assert apply_transition((0, 0), Transition(ARRIVAL, 1.0)) == (1, 0)
    assert apply_transition((1, 1), Transition(DEPARTURE, 1.0, 1)) == (1, 0)
    with pytest.raises(ValueError):
        apply_transition((0, 1), Transition(DEPARTURE, 1.0, 0))
    with pytest.raises(ValueError):
        Transition(ADVANCE, 1.0, 1, 1)
    with pytest.raises(ValueError):
        Transition(ADVANCE, 1.0, 3, 1)


def test_state_from_buffers_examples():
    assert state_from_buffers([["a", "b"], ["b"]]) == (1, 1)
    assert state_from_buffers([[], [], []]) == (0, 0, 0, 0)
    assert state_from_buffers([["a"], ["a"], ["a"]]) == (0, 0, 0, 1)
    with pytest.raises(ProtocolViolation):
        state_from_buffers([["a"], ["b"]])


states_n = st.integers(1, 3).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.integers(0, 6), min_size=1 << n, max_size=1 << n)))


@settings(max_examples=150, deadline=None)
@given(ns=states_n, seed=st.integers(0, 2**32 - 1), correlated=st.booleans())
def test_per_transmitter_probabilities_sum_to_one(ns, seed, correlated):
    n, m = ns
    topo = random_topology(n, np.random.default_rng(seed), density=0.7)
    if correlated:
        topo = expand_correlated(topo)
    q = queue_lengths(m)
    transitions = enumerate_transitions(topo.with_arrival_rate(0.5), m, detail=True)
    for s1, count in enumerate(m):
        if not count:
            continue
        members = [0] + [r for r in range(1, n + 1) if s1 >> (r - 1) & 1]
        for i in members:
            frac = count / q[i]
            moved = sum(t.terms.get(i, 0.0) for t in transitions if t.src == s1)
            dep, adv = _outcome_probs(topo, i, s1)
            # whatever does not move the packet leaves the state unchanged
            stay = 1.0 - dep - sum(adv.values())
            assert stay >= -1e-12
            assert moved / frac + stay == pytest.approx(1.0, abs=1e-12)
    for t in transitions:
        assert t.rate > 0
        if t.kind == ADVANCE:
            assert t.src & t.dst == t.src and t.src != t.dst
        if t.kind != ARRIVAL:
            assert sum(t.terms.values()) == pytest.approx(t.rate, rel=1e-12)
        after = queue_lengths(apply_transition(m, t))
        assert all(after[0] >= x for x in after[1:])


@settings(max_examples=60, deadline=None)
@given(ns=states_n, seed=st.integers(0, 2**32 - 1))
def test_correlated_expansion_gives_same_chain(ns, seed):
    n, m = ns
    topo = random_topology(n, np.random.default_rng(seed), density=0.7, arrival_rate=0.4)
    a = as_dict(enumerate_transitions(topo, m))
    b = as_dict(enumerate_transitions(expand_correlated(topo), m))
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-15)


def test_stationary_single_relay_converges(single_relay):
    topo = single_relay.with_arrival_rate(0.2)
    res = solve_stationary_truncated(topo, 60)
    assert res.boundary_mass < 1e-8
    assert abs(res.pi.sum() - 1) < 1e-12 and res.pi.min() >= 0
    coarse = solve_stationary_truncated(topo, 40)
    assert res.mean_queue == pytest.approx(coarse.mean_queue, rel=1e-6)
    assert res.mean_queue[0] > res.mean_queue[1] > 0


def test_stationary_satisfies_balance(single_relay):
    res = solve_stationary_truncated(single_relay.with_arrival_rate(0.2), 30)
    assert np.max(np.abs(res.pi @ res.generator)) < 1e-12
    assert np.allclose(np.asarray(res.generator.sum(axis=1)).ravel(), 0.0, atol=1e-12)


def test_stationary_zero_arrivals(single_relay):
    res = solve_stationary_truncated(single_relay.with_arrival_rate(0.0), 5)
    assert res.pi[0] == pytest.approx(1.0)
    assert res.mean_queue == pytest.approx([0.0, 0.0], abs=1e-12)


def test_stationary_warns_on_heavy_boundary(single_relay):
    with pytest.warns(TruncationWarning):
        solve_stationary_truncated(single_relay.with_arrival_rate(0.7), 10)


def test_write_generator(tmp_path, single_relay):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        res = solve_stationary_truncated(single_relay.with_arrival_rate(0.2), 3)
    path = tmp_path / "q.txt"
    res.write_generator(path)
    lines = path.read_text().splitlines()
    assert len(lines) == res.generator.nnz
    r, c, v = lines[0].split()
    assert (int(r), int(c)) == (0, 0) and float(v) == pytest.approx(-0.2)
