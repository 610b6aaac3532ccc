"""Continuous-time Markov chain over packet-multiplicity counters.

A state is a length-``2^n`` integer vector ``m`` indexed by cut mask:
``m[S]`` counts packets held by exactly the source plus the relays of ``S``.
States are plain tuples so they hash; functions also accept any sequence.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .topology import SOURCE, Topology, relay_mask_from_nodes

ARRIVAL = "arrival"
DEPARTURE = "departure"
ADVANCE = "advance"

BOUNDARY_MASS_WARN = 1e-6


class ProtocolViolation(ValueError):
    """A relay holds a packet the source does not."""


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Transition:
    kind: str
    rate: float
    src: int = -1
    dst: int = -1
    # per-transmitter rate contributions, filled only when requested
    terms: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == ADVANCE and not (self.src & self.dst == self.src and self.src != self.dst):
            raise ValueError("advance must move a packet to a strict superset")


def relay_count(state: Sequence[int]) -> int:
    n = len(state).bit_length() - 1
    if len(state) != 1 << n:
        raise ValueError(f"state length {len(state)} is not a power of two")
    return n


def queue_length(state: Sequence[int], node: int) -> int:
    """Buffer occupancy of ``node``; the destination has no buffer."""
    n = relay_count(state)
    if node == SOURCE:
        return int(sum(state))
    if node == n + 1:
        return 0
    bit = 1 << (node - 1)
    return int(sum(c for s, c in enumerate(state) if s & bit))


def queue_lengths(state: Sequence[int]) -> list[int]:
    """Occupancy of the source and every relay, in node-id order."""
    n = relay_count(state)
    return [queue_length(state, k) for k in range(n + 1)]


def _supersets(s1: int, n: int) -> Iterable[int]:
    """Strict supersets of ``s1`` within ``n`` relays (subset-of-complement walk)."""
    comp = ((1 << n) - 1) & ~s1
    a = comp
    while a:
        yield s1 | a
        a = (a - 1) & comp


def _outcome_probs(topology: Topology, i: int, s1: int) -> tuple[float, dict[int, float]]:
    """Departure probability and advance targets for one transmission of a packet in ``s1`` by ``i``."""
    n = topology.n
    d = n + 1
    if topology.reception.correlated:
        dep = 0.0
        adv: dict[int, float] = {}
        for w, p in topology.reception.dist.get(i, ()):
            if w >> d & 1:
                dep += p
                continue
            gained = relay_mask_from_nodes(w, n) & ~s1
            if gained:
                s2 = s1 | gained
                adv[s2] = adv.get(s2, 0.0) + p
        return dep, adv
    eps = topology.erasure
    dep = 1.0 - eps[i, d]
    adv = {}
    for s2 in _supersets(s1, n):
        p = eps[i, d]
        for r in range(1, n + 1):
            bit = 1 << (r - 1)
            if s2 & bit:
                if not s1 & bit:
                    p *= 1.0 - eps[i, r]
            else:
                p *= eps[i, r]
        if p > 0.0:
            adv[s2] = p
    return dep, adv


def enumerate_transitions(topology: Topology, state: Sequence[int],
                          detail: bool = False) -> list[Transition]:
    """Every transition out of ``state`` with a strictly positive rate.

    With ``detail=True`` each transition carries ``terms``: the rate
    contributed by each transmitting node id.
    """
    n = topology.n
    if len(state) != 1 << n:
        raise ValueError(f"state has {len(state)} entries, expected {1 << n}")
    q = queue_lengths(state)
    out = []
    if topology.arrival_rate > 0.0:
        out.append(Transition(ARRIVAL, topology.arrival_rate))
    for s1, count in enumerate(state):
        if count <= 0:
            continue
        dep_rate = 0.0
        dep_terms = {}
        adv_rate: dict[int, float] = {}
        adv_terms: dict[int, dict[int, float]] = {}
        members = [SOURCE] + [r for r in range(1, n + 1) if s1 >> (r - 1) & 1]
        for i in members:
            if q[i] == 0:
                continue  # 0/0 = 0: an idle node transmits nothing
            frac = count / q[i]
            dep, adv = _outcome_probs(topology, i, s1)
            if dep > 0.0:
                dep_rate += dep * frac
                dep_terms[i] = dep * frac
            for s2, p in adv.items():
                adv_rate[s2] = adv_rate.get(s2, 0.0) + p * frac
                adv_terms.setdefault(s2, {})[i] = p * frac
        if dep_rate > 0.0:
            out.append(Transition(DEPARTURE, dep_rate, s1, -1, dep_terms if detail else {}))
        for s2 in sorted(adv_rate):
            if adv_rate[s2] > 0.0:
                out.append(Transition(ADVANCE, adv_rate[s2], s1, s2, adv_terms[s2] if detail else {}))
    return out


def apply_transition(state: Sequence[int], t: Transition) -> tuple[int, ...]:
    m = list(state)
    if t.kind == ARRIVAL:
        m[0] += 1
    elif t.kind == DEPARTURE:
        m[t.src] -= 1
    elif t.kind == ADVANCE:
        m[t.src] -= 1
        m[t.dst] += 1
    else:
        raise ValueError(f"unknown transition kind {t.kind!r}")
    if min(m) < 0:
        raise ValueError(f"illegal {t.kind} transition from {tuple(state)}")
    return tuple(m)


def total_exit_rate(topology: Topology, state: Sequence[int]) -> float:
    return sum(t.rate for t in enumerate_transitions(topology, state))


def state_from_buffers(buffers: Sequence[Iterable[int]]) -> tuple[int, ...]:
    """Count packets by holder set. ``buffers[0]`` is the source, then relays."""
    n = len(buffers) - 1
    holders = {pid: 0 for pid in buffers[0]}
    for r in range(1, n + 1):
        bit = 1 << (r - 1)
        for pid in buffers[r]:
            if pid not in holders:
                raise ProtocolViolation(f"relay {r} holds packet {pid} missing at the source")
            holders[pid] |= bit
    m = [0] * (1 << n)
    for mask in holders.values():
        m[mask] += 1
    return tuple(m)


# -- truncated stationary solve ------------------------------------------------

@dataclass
class StationaryResult:
    states: list[tuple[int, ...]]
    pi: np.ndarray
    cap: int
    boundary_mass: float
    mean_queue: list[float]
    generator: sp.csr_matrix = field(repr=False)

    def write_generator(self, path: str | Path) -> None:
        """Dump off-diagonal and diagonal entries as ``row col rate`` lines."""
        coo = self.generator.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            for k in order:
                fh.write(f"{int(coo.row[k])} {int(coo.col[k])} {float(coo.data[k])!r}\n")


def solve_stationary_truncated(topology: Topology, cap: int) -> StationaryResult:
    """Stationary law of the chain restricted to ``0 <= m[S] <= cap``.

    Moves that would leave the box are dropped (folded into the diagonal),
    which keeps the truncated generator conservative.
    """
    n = topology.n
    dims = 1 << n
    size = (cap + 1) ** dims
    if size > 2_000_000:
        raise ValueError(f"truncated state space too large ({size} states)")
    states = list(itertools.product(range(cap + 1), repeat=dims))
    radix = np.array([(cap + 1) ** (dims - 1 - k) for k in range(dims)])

    rows, cols, vals = [], [], []
    for idx, st in enumerate(states):
        out_rate = 0.0
        for t in enumerate_transitions(topology, st):
            nxt = apply_transition(st, t)
            if max(nxt) > cap:
                continue
            j = int(np.dot(nxt, radix))
            rows.append(idx)
            cols.append(j)
            vals.append(t.rate)
            out_rate += t.rate
        rows.append(idx)
        cols.append(idx)
        vals.append(-out_rate)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))

    # pi Q = 0 with sum(pi) = 1: replace one balance equation by normalization
    a = q.T.tolil()
    a[0, :] = np.ones(size)
    b = np.zeros(size)
    b[0] = 1.0
    pi = spla.spsolve(a.tocsc(), b)
    if not np.all(np.isfinite(pi)):
        raise np.linalg.LinAlgError("singular truncated generator")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()

    arr = np.array(states)
    boundary = (arr == cap).any(axis=1)
    boundary_mass = float(pi[boundary].sum()) if cap > 0 else 0.0
    if boundary_mass > BOUNDARY_MASS_WARN:
        warnings.warn(f"truncation boundary carries probability {boundary_mass:.3g}; raise the cap",
                      TruncationWarning, stacklevel=2)
    mean_queue = []
    for k in range(n + 1):
        if k == SOURCE:
            ql = arr.sum(axis=1)
        else:
            sel = [s for s in range(dims) if s >> (k - 1) & 1]
            ql = arr[:, sel].sum(axis=1)
        mean_queue.append(float(pi @ ql))
    return StationaryResult(states, pi, cap, boundary_mass, mean_queue, q)
