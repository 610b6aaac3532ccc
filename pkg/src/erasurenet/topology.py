"""Erasure network description, cut enumeration and cut-set capacities.

Node ids are integers: ``0`` is the source, ``1..n`` are relays and
``n + 1`` is the destination. A cut is an ``n``-bit integer mask over the
relays (bit ``i - 1`` set means relay ``i`` is in the cut); the source is
always inside the cut and the destination never is, so neither is stored.

Receiver sets ``W`` used by the reception model are masks over *node ids*
(bit ``k`` set means node ``k`` received), so they can include the
destination.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

SOURCE = 0
NORMALIZATION_TOL = 1e-12
# Exhaustive cut enumeration is 2^n; beyond this it stops being practical.
MAX_ENUMERABLE_RELAYS = 24


class TopologyError(ValueError):
    """Raised when a topology (or its config file) violates an invariant."""


@dataclass(frozen=True)
class ReceptionModel:
    """How one transmission is heard by the other nodes.

    ``mode`` is ``"independent"`` (per-edge Bernoulli erasures) or
    ``"correlated"``. A correlated model stores, per transmitter, the sparse
    distribution of the exact receiver set as ``(node_mask, probability)``
    pairs; subsets with probability zero are omitted.
    """

    mode: str = "independent"
    dist: Mapping[int, tuple[tuple[int, float], ...]] = field(default_factory=dict)

    @property
    def correlated(self) -> bool:
        return self.mode == "correlated"


@dataclass(frozen=True, eq=False)
class Topology:
    n: int
    erasure: np.ndarray
    arrival_rate: float = 0.0
    reception: ReceptionModel = field(default_factory=ReceptionModel)

    def __post_init__(self):
        eps = np.array(self.erasure, dtype=float)
        eps.setflags(write=False)
        object.__setattr__(self, "erasure", eps)

    @property
    def dest(self) -> int:
        return self.n + 1

    @property
    def num_nodes(self) -> int:
        return self.n + 2

    @property
    def success(self) -> np.ndarray:
        return 1.0 - self.erasure

    def mu(self, i: int, j: int) -> float:
        return 1.0 - float(self.erasure[i, j])

    def with_arrival_rate(self, rate: float) -> "Topology":
        return Topology(self.n, self.erasure, rate, self.reception)

    @classmethod
    def from_edges(cls, n: int, edges: Mapping[tuple[int, int], float],
                   arrival_rate: float = 0.0,
                   reception: ReceptionModel | None = None) -> "Topology":
        """Build from ``{(i, j): erasure}``; unlisted edges are absent."""
        eps = np.ones((n + 2, n + 2))
        for (i, j), e in edges.items():
            eps[i, j] = e
        return cls(n, eps, arrival_rate, reception or ReceptionModel())


# -- cut helpers -----------------------------------------------------------

def cut_members(mask: int, n: int) -> list[int]:
    """Node ids in cut ``mask``: the source followed by member relays."""
    return [SOURCE] + [r for r in range(1, n + 1) if mask >> (r - 1) & 1]


def in_cut(node: int, mask: int) -> bool:
    return node == SOURCE or (node >= 1 and bool(mask >> (node - 1) & 1))


def iter_cuts(n: int) -> Iterator[int]:
    return iter(range(1 << n))


def format_cut(mask: int, n: int) -> str:
    names = ["s"] + [str(r) for r in cut_members(mask, n)[1:]]
    return "{" + ",".join(names) + "}"


def relay_mask_from_nodes(node_mask: int, n: int) -> int:
    """Project a node-id mask onto the relay-only cut encoding."""
    return (node_mask >> 1) & ((1 << n) - 1)


# -- validation ------------------------------------------------------------

def validate(topology: Topology) -> Topology:
    """Return ``topology`` unchanged if every invariant holds.

    Raises :class:`TopologyError` naming the first violation found.
    """
    n = topology.n
    eps = topology.erasure
    if n < 0:
        raise TopologyError("relay count must be non-negative")
    if eps.shape != (n + 2, n + 2):
        raise TopologyError(f"erasure matrix must be {n + 2}x{n + 2}, got {eps.shape}")
    if not np.all(np.isfinite(eps)) or np.any(eps < 0.0) or np.any(eps > 1.0):
        raise TopologyError("probability out of range")
    if np.any(np.diag(eps) != 1.0):
        raise TopologyError("self-loop: diagonal erasure must be 1")
    if np.any(eps[:, SOURCE] != 1.0):
        raise TopologyError("edge into source")
    if np.any(eps[n + 1, :] != 1.0):
        raise TopologyError("edge out of destination")
    if not (topology.arrival_rate >= 0.0 and math.isfinite(topology.arrival_rate)):
        raise TopologyError("arrival rate must be a finite non-negative number")
    rec = topology.reception
    if rec.mode not in ("independent", "correlated"):
        raise TopologyError(f"unknown reception mode {rec.mode!r}")
    if rec.correlated:
        _validate_dist(topology)
    return topology


def _validate_dist(topology: Topology) -> None:
    n = topology.n
    full = (1 << (n + 2)) - 1
    for tx in range(n + 1):
        entries = topology.reception.dist.get(tx, ())
        total = 0.0
        for w, p in entries:
            if not (0.0 <= p <= 1.0):
                raise TopologyError("probability out of range")
            if w & ~full:
                raise TopologyError(f"receiver set {w:#x} names an unknown node")
            if w & 1:
                raise TopologyError("edge into source")
            if w >> tx & 1:
                raise TopologyError("self-loop: transmitter in its own receiver set")
            total += p
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise TopologyError(
                f"reception distribution not normalized for node {tx} (sum={total!r})")
    if set(topology.reception.dist) - set(range(n + 1)):
        raise TopologyError("edge out of destination")


# -- reception model ---------------------------------------------------------

def reception_probability(topology: Topology, i: int, w: int) -> float:
    """Probability that exactly the node set ``w`` hears a transmission by ``i``."""
    if w >> i & 1:
        raise ValueError(f"transmitter {i} cannot be in its own receiver set")
    if topology.reception.correlated:
        return sum(p for mask, p in topology.reception.dist.get(i, ()) if mask == w)
    eps = topology.erasure
    prob = 1.0
    for j in range(topology.num_nodes):
        if j == i:
            continue
        prob *= (1.0 - eps[i, j]) if w >> j & 1 else eps[i, j]
    return prob


def reception_distribution(topology: Topology, i: int) -> tuple[tuple[int, float], ...]:
    """Sparse ``(w, p)`` list of receiver sets for transmitter ``i``.

    Under the independent model this enumerates the product form over the
    nodes ``i`` can actually reach, so the cost is ``2^(reachable)``.
    """
    if topology.reception.correlated:
        return tuple(topology.reception.dist.get(i, ()))
    eps = topology.erasure
    reach = [j for j in range(1, topology.num_nodes) if j != i and eps[i, j] < 1.0]
    out = []
    for bits in range(1 << len(reach)):
        w = 0
        p = 1.0
        for k, j in enumerate(reach):
            if bits >> k & 1:
                w |= 1 << j
                p *= 1.0 - eps[i, j]
            else:
                p *= eps[i, j]
        if p > 0.0:
            out.append((w, p))
    return tuple(out)


def expand_correlated(topology: Topology) -> Topology:
    """The same network with its independent model written out as ``p(i, W)``."""
    if topology.reception.correlated:
        return topology
    dist = {i: reception_distribution(topology, i) for i in range(topology.n + 1)}
    return Topology(topology.n, topology.erasure, topology.arrival_rate,
                    ReceptionModel("correlated", dist))


# -- cut-set capacity --------------------------------------------------------

def _outside_mask(topology: Topology, cut: int) -> int:
    """Node-id mask of relays outside ``cut`` plus the destination."""
    n = topology.n
    relays_out = ~cut & ((1 << n) - 1)
    return (relays_out << 1) | (1 << (n + 1))


def node_cut_contribution(topology: Topology, i: int, cut: int) -> float:
    """Rate at which node ``i`` of the cut gets a packet across it."""
    if not in_cut(i, cut) or i > topology.n:
        raise ValueError(f"node {i} is not in cut {format_cut(cut, topology.n)}")
    outside = _outside_mask(topology, cut)
    if topology.reception.correlated:
        return sum(p for w, p in topology.reception.dist.get(i, ()) if w & outside)
    prod = 1.0
    for j in range(1, topology.num_nodes):
        if outside >> j & 1:
            prod *= topology.erasure[i, j]
    return 1.0 - prod


def cut_capacity(topology: Topology, cut: int) -> float:
    return sum(node_cut_contribution(topology, i, cut) for i in cut_members(cut, topology.n))


def all_cut_capacities(topology: Topology) -> list[float]:
    if topology.n > MAX_ENUMERABLE_RELAYS:
        raise ValueError(f"exhaustive cut enumeration limited to n <= {MAX_ENUMERABLE_RELAYS}")
    return [cut_capacity(topology, s) for s in iter_cuts(topology.n)]


def min_cut(topology: Topology) -> tuple[float, int]:
    """Minimum cut-set capacity and its cut; ties go to the smallest mask."""
    caps = all_cut_capacities(topology)
    best = min(range(len(caps)), key=lambda s: (caps[s], s))
    return caps[best], best


def subset_identity_check(topology: Topology, i: int, s1: int) -> float:
    """Largest residual of the subset-product normalization identities.

    Two identities are checked for transmitter ``i`` holding a packet known
    to exactly the cut ``s1``:

    * the receiver-set probabilities over every candidate receiver sum to 1;
    * for every cut ``S`` containing ``s1``, the probability mass of
      outcomes that add a relay outside ``S`` equals
      ``1 - prod_{relays j outside S} eps_ij``.
    """
    if not in_cut(i, s1):
        raise ValueError(f"node {i} is not in cut {format_cut(s1, topology.n)}")
    n = topology.n
    eps = topology.erasure
    cand = [j for j in range(1, n + 2) if j != i]
    p = np.array([1.0 - eps[i, j] for j in cand])
    total = 0.0
    for bits in range(1 << len(cand)):
        sel = np.array([(bits >> k) & 1 for k in range(len(cand))], dtype=bool)
        total += float(np.prod(np.where(sel, p, 1.0 - p)))
    residual = abs(1.0 - total)
    if n == 0:
        return residual

    full = (1 << n) - 1
    comp = full & ~s1
    # weight of ending in S2 = s1 | a for every a within the complement
    subs = []
    a = comp
    while True:
        subs.append(a)
        if a == 0:
            break
        a = (a - 1) & comp
    s2s = np.array([s1 | a for a in subs], dtype=np.int64)
    mu_r = np.array([1.0 - eps[i, r] for r in range(1, n + 1)])
    eps_r = np.array([eps[i, r] for r in range(1, n + 1)])
    bits = (s2s[:, None] >> np.arange(n)) & 1
    new = bits & ((~s1 >> np.arange(n)) & 1)
    absent = 1 - bits
    w = np.prod(np.where(new == 1, mu_r, 1.0), axis=1) * np.prod(np.where(absent == 1, eps_r, 1.0), axis=1)
    strict = s2s != s1
    for s in range(1 << n):
        if s & s1 != s1:
            continue
        escapes = strict & ((s2s & ~s) != 0)
        lhs = float(w[escapes].sum())
        rhs = 1.0 - float(np.prod([eps[i, r] for r in range(1, n + 1) if not s >> (r - 1) & 1]))
        residual = max(residual, abs(lhs - rhs))
    return residual


# -- model transforms --------------------------------------------------------

def insert_feedback_delay_chain(topology: Topology, delay: int) -> Topology:
    """Model ack delay by appending ``delay`` lossless hops after the destination.

    The old destination becomes relay ``n + 1`` and keeps its node id; the
    new relays ``n + 2 .. n + delay`` and the new destination ``n + delay + 1``
    form a lossless line behind it. No other node can reach the new nodes.
    """
    if delay < 1:
        raise ValueError("delay chain length must be at least 1")
    n = topology.n
    old_d = n + 1
    n_new = n + delay
    eps = np.ones((n_new + 2, n_new + 2))
    eps[: n + 2, : n + 2] = topology.erasure
    for k in range(old_d, n_new + 1):
        eps[k, k + 1] = 0.0
    rec = topology.reception
    if rec.correlated:
        dist = dict(rec.dist)
        for k in range(old_d, n_new + 1):
            dist[k] = ((1 << (k + 1), 1.0),)
        rec = ReceptionModel("correlated", dist)
    return Topology(n_new, eps, topology.arrival_rate, rec)


# -- config files ----------------------------------------------------------

def _parse_node(token, n: int) -> int:
    if token == "s":
        return SOURCE
    if token == "d":
        return n + 1
    if isinstance(token, bool) or not isinstance(token, int) or not 1 <= token <= n:
        raise TopologyError(f"bad node reference {token!r}")
    return token


def _unparse_node(k: int, n: int):
    if k == SOURCE:
        return "s"
    if k == n + 1:
        return "d"
    return k


def topology_from_dict(cfg: Mapping) -> Topology:
    try:
        n = int(cfg["relays"])
        lam = float(cfg.get("arrival_rate", 0.0))
        edges = {}
        for e in cfg.get("edges", []):
            i = _parse_node(e["from"], n)
            j = _parse_node(e["to"], n)
            edges[i, j] = float(e["erasure"])
        rec_cfg = cfg.get("reception", {"mode": "independent"})
        mode = rec_cfg.get("mode", "independent")
        dist: dict[int, list[tuple[int, float]]] = {}
        if mode == "correlated":
            for entry in rec_cfg["dist"]:
                tx = _parse_node(entry["tx"], n)
                w = 0
                for r in entry["receivers"]:
                    w |= 1 << _parse_node(r, n)
                dist.setdefault(tx, []).append((w, float(entry["p"])))
    except (KeyError, TypeError) as exc:
        raise TopologyError(f"malformed topology config: {exc!r}") from exc
    if n < 0:
        raise TopologyError("relay count must be non-negative")
    eps = np.ones((n + 2, n + 2))
    for (i, j), e in edges.items():
        eps[i, j] = e
    if mode == "correlated":
        # marginal erasures, kept for display and structural checks
        for tx, entries in dist.items():
            for j in range(n + 2):
                if j != tx:
                    eps[tx, j] = 1.0 - sum(p for w, p in entries if w >> j & 1)
        eps = np.clip(eps, 0.0, 1.0)
    rec = ReceptionModel(mode, {k: tuple(v) for k, v in dist.items()})
    return validate(Topology(n, eps, lam, rec))


def topology_to_dict(topology: Topology) -> dict:
    n = topology.n
    edges = [
        {"from": _unparse_node(i, n), "to": _unparse_node(j, n), "erasure": float(topology.erasure[i, j])}
        for i in range(n + 2) for j in range(n + 2)
        if i != j and topology.erasure[i, j] < 1.0
    ]
    out = {"relays": n, "arrival_rate": topology.arrival_rate, "edges": edges}
    if topology.reception.correlated:
        dist = []
        for tx in sorted(topology.reception.dist):
            for w, p in topology.reception.dist[tx]:
                recv = [_unparse_node(k, n) for k in range(n + 2) if w >> k & 1]
                dist.append({"tx": _unparse_node(tx, n), "receivers": recv, "p": p})
        out["reception"] = {"mode": "correlated", "dist": dist}
    else:
        out["reception"] = {"mode": "independent"}
    return out


def load_topology(path: str | Path) -> Topology:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TopologyError(f"cannot read topology config {path}: {exc}") from exc
    return topology_from_dict(cfg)


def builtin_config_path(name: str) -> Path:
    return Path(str(resources.files("erasurenet") / "data" / f"{name}.json"))


def fig4_topology() -> Topology:
    """Two-relay network used for the slotted-time reproduction study."""
    return load_topology(builtin_config_path("fig4"))


def random_topology(n: int, rng: np.random.Generator, density: float = 1.0,
                    arrival_rate: float = 0.0) -> Topology:
    """Random valid topology; each possible edge is present with ``density``."""
    eps = np.ones((n + 2, n + 2))
    for i in range(n + 1):
        for j in range(1, n + 2):
            if i != j and rng.random() < density:
                eps[i, j] = rng.random()
    return Topology(n, eps, arrival_rate)


def cut_table(topology: Topology) -> list[dict]:
    n = topology.n
    return [
        {"mask": s, "members": format_cut(s, n), "capacity": cap}
        for s, cap in enumerate(all_cut_capacities(topology))
    ]


def nodes_label(k: int, n: int) -> str:
    return str(_unparse_node(k, n))


__all__: Sequence[str] = [
    "SOURCE", "ReceptionModel", "Topology", "TopologyError",
    "all_cut_capacities", "builtin_config_path", "cut_capacity", "cut_members",
    "cut_table", "expand_correlated", "fig4_topology", "format_cut", "in_cut",
    "insert_feedback_delay_chain", "iter_cuts", "load_topology", "min_cut",
    "node_cut_contribution", "random_topology", "reception_distribution",
    "reception_probability", "relay_mask_from_nodes", "subset_identity_check",
    "topology_from_dict", "topology_to_dict", "validate",
]
