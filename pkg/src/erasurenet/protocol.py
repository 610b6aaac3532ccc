"""Randomized forwarding with destination-ack flush: simulation runs.

Every node holding packets transmits one of them, chosen uniformly at
random, at each opportunity. Copies stay in every buffer until the
destination receives the packet, at which point all nodes drop it.

Two timing models are supported:

``async``
    Poisson arrivals at rate ``lambda`` and an independent unit-rate
    exponential clock per non-destination node.
``slotted``
    One Bernoulli(``lambda``) arrival per slot, then one transmission per
    node against the buffers as they stood at the start of the slot.
    Receptions and acks commit at slot end, and an ack beats a copy made
    in the same slot.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend
from ._pysim import (
    PacketBuffer,
    SimWorld,
    ack_flush,
    arrival,
    commit_slot,
    compile_net,
    draw_transmission,
    transmit_event,
)
from .rng import ALGORITHM, DEFAULT_SEED, UniformStream, substream
from .topology import Topology, insert_feedback_delay_chain, nodes_label, validate

TIMINGS = ("slotted", "async")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    timing: str = "slotted"
    arrival_rate: float | None = None  # None: use the topology's rate
    horizon: float = 1500
    seed: int = DEFAULT_SEED
    trials: int = 1
    feedback_delay: int = 0
    record_trace: bool = False
    sample_interval: float = 1.0  # async sampling grid
    max_events: int = 0  # async only; 0 = no cap

    def validate(self) -> "SimConfig":
        if self.timing not in TIMINGS:
            raise ConfigError(f"timing must be one of {TIMINGS}")
        lam = self.arrival_rate
        if lam is not None and not (lam >= 0.0 and math.isfinite(lam)):
            raise ConfigError("arrival rate must be a finite non-negative number")
        if self.timing == "slotted" and lam is not None and lam > 1.0:
            raise ConfigError("slotted arrival probability must not exceed 1")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.timing == "slotted" and self.horizon != int(self.horizon):
            raise ConfigError("slotted horizon is a whole number of slots")
        if self.trials < 1:
            raise ConfigError("need at least one trial")
        if self.feedback_delay < 0:
            raise ConfigError("feedback delay must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not self.sample_interval > 0:
            raise ConfigError("sample interval must be positive")
        return self


@dataclass
class SimTrace:
    """One trial: sampled queue lengths plus end-of-run bookkeeping."""

    times: np.ndarray
    queues: np.ndarray  # (samples, n + 1): source then relays
    arrivals: int
    delivered: int
    end_time: float
    queue_integral: np.ndarray
    delivery_times: np.ndarray
    state: np.ndarray | None
    buffers: list[list[int]]
    events: list[tuple] | None = None

    @property
    def mean_queue(self) -> np.ndarray:
        if self.end_time <= 0:
            return np.zeros_like(self.queue_integral)
        return self.queue_integral / self.end_time

    @property
    def throughput(self) -> float:
        return self.delivered / self.end_time if self.end_time > 0 else 0.0


@dataclass
class AggregatedTrace:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    trials: int

    def csv_rows(self, n: int):
        """Long-form ``(t, node, queue_len)`` rows, time-major."""
        labels = [nodes_label(k, n) for k in range(self.mean.shape[1])]
        for r, t in enumerate(self.times):
            for k, lab in enumerate(labels):
                yield t, lab, self.mean[r, k]


@dataclass
class RunResult:
    config: SimConfig
    topology: Topology
    traces: list[SimTrace]
    aggregate: AggregatedTrace
    summary: dict = field(default_factory=dict)


def _trace_from_kernel(res: dict) -> SimTrace:
    return SimTrace(
        times=res["times"], queues=res["queues"], arrivals=res["arrivals"],
        delivered=res["delivered"], end_time=res["end_time"],
        queue_integral=res["queue_integral"], delivery_times=res["delivery_times"],
        state=res["state"], buffers=res["buffers"], events=res["log"],
    )


def run_trial(topology: Topology, config: SimConfig, trial: int, backend: str | None = None) -> SimTrace:
    """One trial on an already-transformed topology, on stream ``(seed, trial)``."""
    kernel = _backend.get(backend)
    net = compile_net(topology)
    lam = topology.arrival_rate if config.arrival_rate is None else config.arrival_rate
    gen = substream(config.seed, trial)
    if config.timing == "slotted":
        res = kernel.simulate_slotted(net, lam, int(config.horizon), gen,
                                      record_events=config.record_trace)
    else:
        res = kernel.simulate_async(net, lam, float(config.horizon), config.sample_interval, gen,
                                    max_events=config.max_events,
                                    record_events=config.record_trace)
    return _trace_from_kernel(res)


def aggregate_trials(traces: list[SimTrace]) -> AggregatedTrace:
    """Pointwise ensemble mean and standard error of the sampled queue lengths."""
    if not traces:
        raise ValueError("nothing to aggregate")
    times = traces[0].times
    for tr in traces[1:]:
        if tr.queues.shape != traces[0].queues.shape or not np.array_equal(tr.times, times):
            raise ValueError("traces do not share a sampling grid")
    stack = np.stack([tr.queues for tr in traces]).astype(float)
    mean = stack.mean(axis=0)
    if len(traces) > 1:
        stderr = stack.std(axis=0, ddof=1) / math.sqrt(len(traces))
    else:
        stderr = np.zeros_like(mean)
    return AggregatedTrace(times.copy(), mean, stderr, len(traces))


def effective_topology(topology: Topology, config: SimConfig) -> Topology:
    topo = validate(topology)
    if config.arrival_rate is not None:
        topo = topo.with_arrival_rate(config.arrival_rate)
    if config.feedback_delay:
        topo = insert_feedback_delay_chain(topo, config.feedback_delay)
    return topo


def run(topology: Topology, config: SimConfig, jobs: int = 1, backend: str | None = None) -> RunResult:
    """Run ``config.trials`` independent trials and aggregate them.

    Trials may execute on up to ``jobs`` threads; each uses its own
    sub-stream, so results do not depend on ``jobs``.
    """
    config.validate()
    topo = effective_topology(topology, config)
    if config.timing == "async" and config.max_events and config.trials > 1:
        # event-capped runs end at different times and share no grid
        raise ConfigError("event-capped async runs aggregate one trial at a time")
    if jobs > 1 and config.trials > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(lambda k: run_trial(topo, config, k, backend), range(config.trials)))
    else:
        traces = [run_trial(topo, config, k, backend) for k in range(config.trials)]
    agg = aggregate_trials(traces)
    return RunResult(config, topo, traces, agg, summarize(topo, config, traces))


def summarize(topology: Topology, config: SimConfig, traces: list[SimTrace]) -> dict:
    n = topology.n
    delivered = sum(tr.delivered for tr in traces)
    elapsed = sum(tr.end_time for tr in traces)
    mean_q = np.mean([tr.mean_queue for tr in traces], axis=0)
    return {
        "delivered": delivered,
        "arrivals": sum(tr.arrivals for tr in traces),
        "throughput": delivered / elapsed if elapsed > 0 else 0.0,
        "mean_queue": {nodes_label(k, n): float(mean_q[k]) for k in range(n + 1)},
        "trials": len(traces),
        "seed": config.seed,
        "rng": ALGORITHM,
        "config": {**asdict(config), "arrival_rate": topology.arrival_rate},
    }


def new_world(topology: Topology, seed: int = DEFAULT_SEED, trial: int = 0,
              record_events: bool = False) -> SimWorld:
    """Fresh empty world for stepping the protocol by hand."""
    return SimWorld(compile_net(validate(topology)), UniformStream(substream(seed, trial)),
                    record_events=record_events)


__all__ = [
    "AggregatedTrace", "ConfigError", "PacketBuffer", "RunResult", "SimConfig",
    "SimTrace", "SimWorld", "ack_flush", "aggregate_trials", "arrival", "commit_slot",
    "draw_transmission", "effective_topology", "new_world", "run", "run_trial",
    "summarize", "transmit_event",
]
