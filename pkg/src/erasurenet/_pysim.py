"""Pure-Python simulation engine.

This is the reference implementation of the forwarding protocol and the
fallback used when the compiled kernel is unavailable. The compiled
kernel consumes random draws in exactly the same order, so both produce
identical traces for the same stream.

Draw order
----------
* slotted: one draw for the Bernoulli arrival, then for each node in id
  order with a non-empty buffer: one draw for the packet pick followed by
  the reception draws;
* async: one draw for the inter-event time, one for the event category,
  then (if a non-empty node transmits) the pick and reception draws;
* reception (independent model): one draw per reachable receiver in id
  order, skipped for lossless links; (correlated model): a single
  inverse-CDF draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .topology import Topology, reception_distribution, relay_mask_from_nodes

# state tracking stores 2^n counters
MAX_TRACKED_RELAYS = 20
MAX_SIM_RELAYS = 62

EV_ARRIVAL = 0
EV_TRANSMIT = 1
EV_DELIVER = 2
EVENT_NAMES = ("arrival", "transmit", "deliver")


@dataclass(frozen=True, eq=False)
class CompiledNet:
    """Flat per-transmitter reception tables consumed by both engines."""

    n: int
    correlated: bool
    # independent model: reachable receivers (node id) and success probability
    cand_ptr: np.ndarray
    cand_node: np.ndarray
    cand_mu: np.ndarray
    # correlated model: outcome CDF, relay mask and destination flag
    out_ptr: np.ndarray
    out_cdf: np.ndarray
    out_relays: np.ndarray
    out_dest: np.ndarray


def compile_net(topology: Topology) -> CompiledNet:
    n = topology.n
    if n > MAX_SIM_RELAYS:
        raise ValueError(f"simulation supports at most {MAX_SIM_RELAYS} relays")
    eps = topology.erasure
    cand_ptr = [0]
    cand_node: list[int] = []
    cand_mu: list[float] = []
    out_ptr = [0]
    out_cdf: list[float] = []
    out_relays: list[int] = []
    out_dest: list[int] = []
    for i in range(n + 1):
        for j in range(1, n + 2):
            if j != i and eps[i, j] < 1.0:
                cand_node.append(j)
                cand_mu.append(1.0 - float(eps[i, j]))
        cand_ptr.append(len(cand_node))
        if topology.reception.correlated:
            acc = 0.0
            for w, p in reception_distribution(topology, i):
                if p <= 0.0:
                    continue
                acc += p
                out_cdf.append(acc)
                out_relays.append(relay_mask_from_nodes(w, n))
                out_dest.append(w >> (n + 1) & 1)
        out_ptr.append(len(out_cdf))
    return CompiledNet(
        n, topology.reception.correlated,
        np.array(cand_ptr, dtype=np.int64), np.array(cand_node, dtype=np.int64),
        np.array(cand_mu, dtype=np.float64),
        np.array(out_ptr, dtype=np.int64), np.array(out_cdf, dtype=np.float64),
        np.array(out_relays, dtype=np.int64), np.array(out_dest, dtype=np.int64),
    )


class PacketBuffer:
    """Set of packet ids with O(1) insert, delete and uniform pick."""

    __slots__ = ("items", "pos")

    def __init__(self):
        self.items: list[int] = []
        self.pos: dict[int, int] = {}

    def __len__(self):
        return len(self.items)

    def __contains__(self, pid):
        return pid in self.pos

    def __iter__(self):
        return iter(self.items)

    def add(self, pid: int) -> bool:
        if pid in self.pos:
            return False
        self.pos[pid] = len(self.items)
        self.items.append(pid)
        return True

    def discard(self, pid: int) -> None:
        k = self.pos.pop(pid)
        last = self.items.pop()
        if k < len(self.items):
            self.items[k] = last
            self.pos[last] = k

    def pick(self, u: float) -> int:
        k = int(u * len(self.items))
        if k >= len(self.items):
            k = len(self.items) - 1
        return self.items[k]


@dataclass(frozen=True)
class Outcome:
    packet: int
    relays: int
    dest: bool


class SimWorld:
    """Buffers, holder sets, counters and clock of one simulation run."""

    def __init__(self, net: CompiledNet, uniform: Callable[[], float],
                 track_state: bool | None = None, record_events: bool = False):
        self.net = net
        self.n = net.n
        self.uniform = uniform
        self.buffers = [PacketBuffer() for _ in range(net.n + 1)]
        self.holders: dict[int, int] = {}
        if track_state is None:
            track_state = net.n <= MAX_TRACKED_RELAYS
        self.state = [0] * (1 << net.n) if track_state else None
        self.clock = 0.0
        self.next_id = 0
        self.arrivals = 0
        self.delivered = 0
        self.delivery_times: list[float] = []
        self.events = [] if record_events else None

    def queue_lengths(self) -> list[int]:
        return [len(b) for b in self.buffers]

    def _log(self, kind, packet, tx=-1, relays=0, dest=False):
        if self.events is not None:
            self.events.append((self.clock, EVENT_NAMES[kind], packet, tx, relays, bool(dest)))


def arrival(world: SimWorld) -> int:
    pid = world.next_id
    world.next_id += 1
    world.buffers[0].add(pid)
    world.holders[pid] = 0
    if world.state is not None:
        world.state[0] += 1
    world.arrivals += 1
    world._log(EV_ARRIVAL, pid)
    return pid


def draw_receivers(world: SimWorld, node: int) -> tuple[int, bool]:
    net = world.net
    u = world.uniform
    d = net.n + 1
    relays = 0
    dest = False
    if net.correlated:
        x = u()
        lo, hi = int(net.out_ptr[node]), int(net.out_ptr[node + 1])
        if lo == hi:
            return 0, False
        k = lo
        while k < hi - 1 and x >= net.out_cdf[k]:
            k += 1
        return int(net.out_relays[k]), bool(net.out_dest[k])
    for k in range(int(net.cand_ptr[node]), int(net.cand_ptr[node + 1])):
        mu = net.cand_mu[k]
        if mu >= 1.0 or u() < mu:
            j = int(net.cand_node[k])
            if j == d:
                dest = True
            else:
                relays |= 1 << (j - 1)
    return relays, dest


def draw_transmission(world: SimWorld, node: int) -> Outcome | None:
    """Pick a packet and its receivers without changing any buffer."""
    buf = world.buffers[node]
    if not len(buf):
        return None  # opportunity lost
    pid = buf.pick(world.uniform())
    relays, dest = draw_receivers(world, node)
    world._log(EV_TRANSMIT, pid, node, relays, dest)
    return Outcome(pid, relays, dest)


def deliver_to_relays(world: SimWorld, pid: int, relays: int) -> None:
    old = world.holders[pid]
    gained = relays & ~old
    if not gained:
        return  # duplicate reception leaves buffers unchanged
    r = 1
    g = gained
    while g:
        if g & 1:
            world.buffers[r].add(pid)
        g >>= 1
        r += 1
    new = old | gained
    world.holders[pid] = new
    if world.state is not None:
        world.state[old] -= 1
        world.state[new] += 1


def ack_flush(world: SimWorld, pid: int) -> None:
    """Destination acknowledged ``pid``: every node drops it."""
    assert pid in world.holders, f"packet {pid} already flushed"
    mask = world.holders.pop(pid)
    world.buffers[0].discard(pid)
    r = 1
    g = mask
    while g:
        if g & 1:
            world.buffers[r].discard(pid)
        g >>= 1
        r += 1
    if world.state is not None:
        world.state[mask] -= 1
    world.delivered += 1
    world.delivery_times.append(world.clock)
    world._log(EV_DELIVER, pid)


def transmit_event(world: SimWorld, node: int) -> Outcome | None:
    """One transmission opportunity for ``node``, committed immediately."""
    out = draw_transmission(world, node)
    if out is None:
        return None
    if out.dest:
        ack_flush(world, out.packet)
    else:
        deliver_to_relays(world, out.packet, out.relays)
    return out


def commit_slot(world: SimWorld, outcomes: list[Outcome]) -> None:
    """Apply a slot's receptions, then its acks; an ack beats any copy made in the same slot."""
    flushed: dict[int, None] = {}
    for o in outcomes:
        if o.dest:
            flushed.setdefault(o.packet)
    for o in outcomes:
        if o.packet not in flushed and o.relays:
            deliver_to_relays(world, o.packet, o.relays)
    for pid in flushed:
        ack_flush(world, pid)


def _result(world: SimWorld, times, queues, integral, end_time, n_events):
    return {
        "times": np.asarray(times, dtype=np.float64),
        "queues": np.asarray(queues, dtype=np.int64).reshape(len(times), world.n + 1),
        "queue_integral": np.asarray(integral, dtype=np.float64),
        "end_time": float(end_time),
        "events": int(n_events),
        "arrivals": world.arrivals,
        "delivered": world.delivered,
        "delivery_times": np.asarray(world.delivery_times, dtype=np.float64),
        "state": None if world.state is None else np.asarray(world.state, dtype=np.int64),
        "buffers": [list(b.items) for b in world.buffers],
        "log": world.events,
    }


def simulate_slotted(net: CompiledNet, lam: float, slots: int, gen: np.random.Generator,
                     record_events: bool = False, on_event=None) -> dict:
    from .rng import UniformStream

    world = SimWorld(net, UniformStream(gen), record_events=record_events)
    n = net.n
    queues: list[int] = []
    integral = [0.0] * (n + 1)
    for t in range(1, slots + 1):
        world.clock = float(t)
        if world.uniform() < lam:
            arrival(world)
        outcomes = []
        for node in range(n + 1):
            o = draw_transmission(world, node)
            if o is not None:
                outcomes.append(o)
        commit_slot(world, outcomes)
        ql = world.queue_lengths()
        queues.extend(ql)
        for k in range(n + 1):
            integral[k] += ql[k]
        if on_event is not None:
            on_event(world)
    return _result(world, np.arange(1, slots + 1, dtype=float), queues, integral, float(slots), slots)


def simulate_async(net: CompiledNet, lam: float, horizon: float, grid: float,
                   gen: np.random.Generator, max_events: int = 0,
                   record_events: bool = False, on_event=None) -> dict:
    """Continuous-time run: unit-rate clocks at every non-destination node plus Poisson arrivals.

    ``max_events > 0`` stops after that many events even before ``horizon``.
    """
    from .rng import UniformStream

    world = SimWorld(net, UniformStream(gen), record_events=record_events)
    u = world.uniform
    n = net.n
    total = lam + (n + 1)
    times: list[float] = []
    queues: list[int] = []
    integral = [0.0] * (n + 1)
    k_next = 1
    t = 0.0
    n_events = 0
    while not (max_events and n_events >= max_events):
        t_new = t - math.log(1.0 - u()) / total
        t_stop = horizon if t_new > horizon else t_new
        ql = world.queue_lengths()
        while k_next * grid <= t_stop:
            times.append(k_next * grid)
            queues.extend(ql)
            k_next += 1
        if t_new > horizon:
            for k in range(n + 1):
                integral[k] += (horizon - t) * ql[k]
            t = horizon
            break
        for k in range(n + 1):
            integral[k] += (t_new - t) * ql[k]
        t = t_new
        world.clock = t
        x = u() * total
        if x < lam:
            arrival(world)
        else:
            node = int(x - lam)
            if node > n:
                node = n
            transmit_event(world, node)
        n_events += 1
        if on_event is not None:
            on_event(world)
    return _result(world, times, queues, integral, t, n_events)
