"""Exponential Lyapunov function, its expected drift, and drift-sign scans.

``V(m) = sum_S N_{|S|} (1 + delta) ** (sum_{S' subset of S} m[S'])`` where
``|S|`` counts the source. Values overflow doubles quickly, so everything
here works with ``log V`` and returns drifts as ``(sign, log|drift|)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import markov
from .topology import SOURCE, Topology, min_cut, node_cut_contribution

COEFF_MARGIN = 1e-3
DEFAULT_N = 100.0
DEFAULT_DELTA = 0.01
EXHAUSTIVE_LIMIT = 4_000_000


@dataclass(frozen=True)
class LyapunovParams:
    n: int
    N: float
    delta: float
    # log N_k for k = 1..n+1, stored at index k-1
    log_coeffs: tuple[float, ...]

    @property
    def coeffs(self) -> tuple[float, ...]:
        return tuple(math.exp(c) if c < 709.0 else math.inf for c in self.log_coeffs)

    def log_coeff(self, size: int) -> float:
        return self.log_coeffs[size - 1]


class Drift(NamedTuple):
    sign: int
    log_abs: float

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.log_abs > 709.0:
            return self.sign * math.inf
        return self.sign * math.exp(self.log_abs)


def build_coefficients(n: int, N: float = DEFAULT_N, delta: float = DEFAULT_DELTA,
                       margin: float = COEFF_MARGIN) -> LyapunovParams:
    """Coefficients satisfying ``N_k > N * sum_{j>k} C(n+1-k, j-k) N_j`` strictly.

    ``N_{n+1} = 1``; lower cardinalities take the bound times ``1 + margin``.
    """
    if N <= 0 or delta <= 0 or n < 0:
        raise ValueError("need N > 0, delta > 0 and n >= 0")
    logs = [0.0] * (n + 1)
    base = math.log1p(margin) + math.log(N)
    for k in range(n, 0, -1):
        terms = [math.log(math.comb(n + 1 - k, j - k)) + logs[j - 1] for j in range(k + 1, n + 2)]
        logs[k - 1] = base + float(logsumexp(terms))
    if max(logs) > 709.0:
        warnings.warn("Lyapunov coefficients exceed double range; only the log form is exact",
                      RuntimeWarning, stacklevel=2)
    return LyapunovParams(n, float(N), float(delta), tuple(logs))


def check_coefficients(params: LyapunovParams) -> bool:
    """Direct check of the strict recursion, in log space."""
    n = params.n
    if params.log_coeffs[n] != 0.0:
        return False
    for k in range(1, n + 1):
        rhs = math.log(params.N) + float(logsumexp(
            [math.log(math.comb(n + 1 - k, j - k)) + params.log_coeffs[j - 1] for j in range(k + 1, n + 2)]))
        if not params.log_coeffs[k - 1] > rhs:
            return False
    return True


def _subset_sums(m: np.ndarray, n: int) -> np.ndarray:
    """``e[..., S] = sum over S' subset of S of m[..., S']`` (zeta transform on the last axis)."""
    e = np.array(m, dtype=float, copy=True)
    for b in range(n):
        bit = 1 << b
        idx = np.array([s for s in range(1 << n) if s & bit])
        e[..., idx] += e[..., idx ^ bit]
    return e


def _set_sizes(n: int) -> np.ndarray:
    return np.array([bin(s).count("1") + 1 for s in range(1 << n)])


def _term_logs(params: LyapunovParams, state) -> np.ndarray:
    """``log V_S`` for every cut ``S`` (last axis)."""
    n = params.n
    e = _subset_sums(np.asarray(state, dtype=float), n)
    logc = np.array(params.log_coeffs)[_set_sizes(n) - 1]
    return logc + e * math.log1p(params.delta)


def evaluate(params: LyapunovParams, state: Sequence[int]) -> float:
    """``log V(state)``."""
    return float(logsumexp(_term_logs(params, state)))


def _signed_log_sum(logs: np.ndarray, weights: np.ndarray, axis=-1) -> tuple[np.ndarray, np.ndarray]:
    """Sign and log-magnitude of ``sum exp(logs) * weights`` along ``axis``."""
    top = np.max(logs, axis=axis, keepdims=True)
    total = np.sum(np.exp(logs - top) * weights, axis=axis)
    sign = np.sign(total).astype(int)
    with np.errstate(divide="ignore"):
        mag = np.squeeze(top, axis=axis) + np.log(np.abs(total))
    return sign, mag


def expected_drift(topology: Topology, params: LyapunovParams, state: Sequence[int],
                   brute_force: bool = False) -> Drift:
    """Rate-weighted expected change of ``V`` out of ``state``.

    The default path adds up per-term changes: an arrival multiplies every
    term by ``1 + delta``; a departure from ``S1`` or an advance ``S1 -> S2``
    divides by ``1 + delta`` exactly the terms ``S`` with ``S1 <= S`` (and,
    for an advance, ``S2`` not within ``S``). ``brute_force=True`` instead
    evaluates ``V`` before and after every transition.
    """
    n = topology.n
    if params.n != n:
        raise ValueError("parameters built for a different relay count")
    transitions = markov.enumerate_transitions(topology, state)
    if brute_force:
        return _drift_brute(params, state, transitions)
    d = params.delta
    lam = topology.arrival_rate
    leave = np.zeros(1 << n)
    cuts = np.arange(1 << n)
    for t in transitions:
        if t.kind == markov.DEPARTURE:
            leave[(cuts & t.src) == t.src] += t.rate
        elif t.kind == markov.ADVANCE:
            leave[((cuts & t.src) == t.src) & ((cuts & t.dst) != t.dst)] += t.rate
    coef = lam - leave / (1.0 + d)
    sign, mag = _signed_log_sum(_term_logs(params, state), coef)
    sign = int(sign)
    return Drift(sign, float(mag) + math.log(d) if sign else -math.inf)


def _drift_brute(params: LyapunovParams, state, transitions) -> Drift:
    base = evaluate(params, state)
    total = 0.0
    for t in transitions:
        after = evaluate(params, markov.apply_transition(state, t))
        total += t.rate * math.expm1(after - base)
    if total == 0.0:
        return Drift(0, -math.inf)
    return Drift(1 if total > 0 else -1, base + math.log(abs(total)))


# -- vectorized drift over many states -----------------------------------------

def cut_contributions(topology: Topology) -> np.ndarray:
    """``C[i, S]`` for transmitters ``i`` (0 = source) and cuts ``S``; 0 when ``i`` is outside."""
    n = topology.n
    out = np.zeros((n + 1, 1 << n))
    for s in range(1 << n):
        out[SOURCE, s] = node_cut_contribution(topology, SOURCE, s)
        for r in range(1, n + 1):
            if s >> (r - 1) & 1:
                out[r, s] = node_cut_contribution(topology, r, s)
    return out


def drift_signs(topology: Topology, params: LyapunovParams, lam: float,
                states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drift sign and log-magnitude for a batch of states (rows).

    Uses the aggregated form: the expected decrease of term ``S`` is
    ``sum_{i in S} C_i(S) * (packets of i held within S) / q(i)``, which
    follows from summing the per-transmitter outcome probabilities.
    """
    n = topology.n
    m = np.asarray(states, dtype=float)
    k = 1 << n
    cuts = np.arange(k)
    contrib = cut_contributions(topology)
    leave = np.zeros(m.shape)
    q_src = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        for i in range(n + 1):
            if i == SOURCE:
                held = np.ones(k, dtype=bool)
                q = q_src
            else:
                held = (cuts >> (i - 1) & 1).astype(bool)
                q = m[:, held].sum(axis=1)
            # packets held by i whose holder set lies within S, for each S
            within = _subset_sums(np.where(held, m, 0.0), n)
            frac = np.where(q[:, None] > 0, within / q[:, None], 0.0)
            leave += frac * contrib[i]
    coef = lam - leave / (1.0 + params.delta)
    sign, mag = _signed_log_sum(_term_logs(params, m), coef)
    return sign, mag + math.log(params.delta)


# -- thresholds and scans --------------------------------------------------------

def lemma_threshold(topology: Topology, N: float = DEFAULT_N, delta: float = DEFAULT_DELTA,
                    single_relay_form: bool = False) -> float:
    """Arrival rate below which the drift is positive on finitely many states.

    The general bound carries ``(1 + delta)^-2``; the sharper single-relay
    bound (``single_relay_form=True``, ``n == 1`` only) carries ``(1 + delta)^-1``.
    """
    cap, _ = min_cut(topology)
    power = 2
    if single_relay_form:
        if topology.n != 1:
            raise ValueError("single-relay form needs exactly one relay")
        power = 1
    return N / (N + 1.0) * cap / (1.0 + delta) ** power


@dataclass
class DriftRegion:
    lam: float
    threshold: float
    box: int
    positive_drift_count: int
    interior: bool
    bounding_box: list[list[int]] | None
    mode: str
    states_scanned: int

    @property
    def verdict(self) -> str:
        return "interior-finite" if self.interior else "boundary-reaching"

    def to_json(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["verdict"] = self.verdict
        return out


def _box_chunks(dims: int, cap: int, chunk: int = 200_000):
    total = (cap + 1) ** dims
    radix = (cap + 1) ** np.arange(dims - 1, -1, -1)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        yield (idx[:, None] // radix) % (cap + 1)


def _sampled_states(dims: int, cap: int, rng: np.random.Generator, rays: int) -> np.ndarray:
    pts = [np.zeros((1, dims), dtype=int)]
    line = np.arange(cap + 1)
    for a in range(dims):
        axis = np.zeros((cap + 1, dims), dtype=int)
        axis[:, a] = line
        pts.append(axis)
    for _ in range(rays):
        direction = rng.random(dims) * (rng.random(dims) < 0.6)
        if not direction.any():
            direction[rng.integers(dims)] = 1.0
        direction /= direction.max()
        pts.append(np.rint(line[:, None] * direction).astype(int))
    # random points on the outer shell, where escape is decided
    shell = rng.integers(0, cap + 1, size=(rays * 4, dims))
    shell[np.arange(len(shell)), rng.integers(dims, size=len(shell))] = cap
    pts.append(shell)
    return np.unique(np.concatenate(pts), axis=0)


def scan_positive_drift(topology: Topology, params: LyapunovParams, lam: float, box: int,
                        mode: str = "auto", rays: int = 400, seed: int = 0) -> DriftRegion:
    """Locate states with positive drift inside ``[0, box]^(2^n)``.

    Exhaustive when the box is small enough, otherwise axis slices, random
    rays and outer-shell samples (evidence, not proof). ``interior`` is True
    when no positive-drift state touches the box boundary.
    """
    n = topology.n
    dims = 1 << n
    if mode == "auto":
        mode = "exhaustive" if (box + 1) ** dims <= EXHAUSTIVE_LIMIT else "sampled"
    if mode == "exhaustive":
        batches = _box_chunks(dims, box)
    elif mode == "sampled":
        batches = [_sampled_states(dims, box, np.random.default_rng(seed), rays)]
    else:
        raise ValueError(f"unknown scan mode {mode!r}")
    count = 0
    scanned = 0
    lo = np.full(dims, np.iinfo(np.int64).max)
    hi = np.full(dims, -1)
    touches = False
    for states in batches:
        sign, _ = drift_signs(topology, params, lam, states)
        pos = states[sign > 0]
        scanned += len(states)
        if len(pos):
            count += len(pos)
            lo = np.minimum(lo, pos.min(axis=0))
            hi = np.maximum(hi, pos.max(axis=0))
            touches = touches or bool((pos == box).any())
    bbox = [lo.tolist(), hi.tolist()] if count else None
    return DriftRegion(float(lam), lemma_threshold(topology, params.N, params.delta), box,
                       count, not touches, bbox, mode, scanned)


def zero_drift_rate(topology: Topology, params: LyapunovParams, state: Sequence[int]) -> float:
    """Arrival rate at which the drift at ``state`` vanishes (drift is affine in it)."""
    d0 = expected_drift(topology.with_arrival_rate(0.0), params, state).value
    d1 = expected_drift(topology.with_arrival_rate(1.0), params, state).value
    return -d0 / (d1 - d0)
