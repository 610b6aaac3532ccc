"""Command-line experiments.

Exit status: 0 on success, 1 for configuration errors, 2 when an analysis
is inconclusive (a drift scan whose positive-drift set reaches the box).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lyapunov, markov
from .protocol import ConfigError, SimConfig, run
from .rng import DEFAULT_SEED
from .topology import (
    Topology,
    TopologyError,
    builtin_config_path,
    cut_capacity,
    cut_table,
    expand_correlated,
    format_cut,
    insert_feedback_delay_chain,
    load_topology,
    min_cut,
    nodes_label,
)

log = logging.getLogger("erasurenet")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INCONCLUSIVE = 2

MODES = ("analyze-cuts", "simulate", "sweep", "drift-scan", "stationary", "reproduce-fig4")
FIG4_WINDOW = 500
DEFAULT_SLOPE_TOL = 0.005


@dataclass
class ExperimentSpec:
    mode: str
    config: Path | None = None
    out: Path = Path(".")
    lam: float | None = None
    lambdas: list[float] = field(default_factory=list)
    slots: float | None = None
    trials: int | None = None
    seed: int = DEFAULT_SEED
    jobs: int = 1
    timing: str = "slotted"
    delay: int = 0
    grid: float = 1.0
    box: int = 300
    N: float = lyapunov.DEFAULT_N
    delta: float = lyapunov.DEFAULT_DELTA
    threshold_frac: float | None = None
    scan_mode: str = "auto"
    cap: int = 40
    slope_tol: float = DEFAULT_SLOPE_TOL
    dump_generator: Path | None = None

    def validate(self) -> "ExperimentSpec":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.config is not None and not self.config.is_file():
            raise ConfigError(f"config file not found: {self.config}")
        if self.config is None and self.mode != "reproduce-fig4":
            raise ConfigError(f"{self.mode} needs --config")
        lams = list(self.lambdas) + ([self.lam] if self.lam is not None else [])
        for v in lams:
            if not v >= 0:
                raise ConfigError(f"arrival rate {v} is negative")
            if self.timing == "slotted" and v > 1 and self.mode != "drift-scan" and self.mode != "stationary":
                raise ConfigError(f"slotted arrival probability {v} exceeds 1")
        if self.mode == "sweep" and not self.lambdas:
            raise ConfigError("sweep needs --lambdas")
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if self.box < 0 or self.cap < 0:
            raise ConfigError("box and cap must be non-negative")
        return self

    def topology(self) -> Topology:
        path = self.config if self.config is not None else builtin_config_path("fig4")
        return load_topology(path)


# -- outputs -----------------------------------------------------------------

def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_trace_csv(path: Path, result) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node", "queue_len"])
        for t, node, q in result.aggregate.csv_rows(result.topology.n):
            w.writerow([repr(float(t)), node, repr(float(q))])


def _sim_config(spec: ExperimentSpec, lam: float | None, horizon: float, trials: int) -> SimConfig:
    return SimConfig(timing=spec.timing, arrival_rate=lam, horizon=horizon, seed=spec.seed,
                     trials=trials, feedback_delay=spec.delay, sample_interval=spec.grid).validate()


def growth_slope(times: np.ndarray, queue: np.ndarray) -> float:
    """Least-squares slope of ``queue`` over the second half of the run."""
    h = len(times) // 2
    t, q = times[h:], queue[h:]
    if len(t) < 2:
        return 0.0
    tc = t - t.mean()
    return float(np.dot(tc, q - q.mean()) / np.dot(tc, tc))


# -- commands ----------------------------------------------------------------

def cmd_analyze_cuts(spec: ExperimentSpec) -> dict:
    topo = spec.topology()
    if spec.delay:
        topo = insert_feedback_delay_chain(topo, spec.delay)
    n = topo.n
    table = cut_table(topo)
    if topo.reception.correlated:
        # direct sum over escaping receiver sets vs one minus the mass kept inside the cut
        agree = 0.0
        for row in table:
            s = row["mask"]
            inside = 1 | ((s & ((1 << n) - 1)) << 1)
            alt = 0.0
            for i in [0] + [r for r in range(1, n + 1) if s >> (r - 1) & 1]:
                alt += 1.0 - sum(p for w, p in topo.reception.dist.get(i, ()) if w & ~inside == 0)
            agree = max(agree, abs(alt - row["capacity"]))
    else:
        expanded = expand_correlated(topo)
        agree = max(abs(cut_capacity(expanded, row["mask"]) - row["capacity"]) for row in table)
    cap, mask = min_cut(topo)
    report = {
        "relays": n,
        "delay": spec.delay,
        "cuts": table,
        "min_cut": {"capacity": cap, "mask": mask, "members": format_cut(mask, n)},
        "formula_agreement": agree,
    }
    _write_json(spec.out / "cuts.json", report)
    width = max(len(r["members"]) for r in table)
    for r in table:
        print(f"{r['members']:<{width}}  {r['capacity']:.6f}")
    print(f"min-cut {format_cut(mask, n)} = {cap:.6f}")
    return report


def cmd_simulate(spec: ExperimentSpec) -> dict:
    topo = spec.topology()
    horizon = spec.slots if spec.slots is not None else 1500
    trials = spec.trials if spec.trials is not None else 1
    result = run(topo, _sim_config(spec, spec.lam, horizon, trials), jobs=spec.jobs)
    write_trace_csv(spec.out / "trace.csv", result)
    _write_json(spec.out / "summary.json", result.summary)
    s = result.summary
    print(f"delivered {s['delivered']} throughput {s['throughput']:.6f}")
    print("mean queue " + " ".join(f"{k}={v:.4f}" for k, v in s["mean_queue"].items()))
    return s


def cmd_reproduce_fig4(spec: ExperimentSpec) -> dict:
    topo = spec.topology()
    lam = 0.45 if spec.lam is None else spec.lam
    slots = spec.slots if spec.slots is not None else 1500
    trials = spec.trials if spec.trials is not None else 500
    cfg = SimConfig(timing="slotted", arrival_rate=lam, horizon=slots, seed=spec.seed,
                    trials=trials, feedback_delay=spec.delay).validate()
    result = run(topo, cfg, jobs=spec.jobs)
    write_trace_csv(spec.out / "trace.csv", result)
    mean = result.aggregate.mean
    window = mean[-FIG4_WINDOW:]
    wmean = window.mean(axis=0)
    labels = [nodes_label(k, result.topology.n) for k in range(mean.shape[1])]
    ordering = None
    if trials > 1 and result.topology.n >= 2:
        ordering = bool(wmean[0] >= wmean[2] >= wmean[1])
    summary = dict(result.summary)
    summary["final_window"] = {
        "slots": len(window),
        "mean_queue": {lab: float(v) for lab, v in zip(labels, wmean)},
        "ordering_source_ge_relay2_ge_relay1": ordering,
    }
    _write_json(spec.out / "summary.json", summary)
    print("final-window mean " + " ".join(f"{lab}={v:.4f}" for lab, v in zip(labels, wmean)))
    if ordering is None:
        print("ordering check skipped (single trial)")
    else:
        print(f"ordering s >= 2 >= 1: {'pass' if ordering else 'FAIL'}")
    return summary


def cmd_sweep_lambda(spec: ExperimentSpec) -> dict:
    topo = spec.topology()
    horizon = spec.slots if spec.slots is not None else 20000
    trials = spec.trials if spec.trials is not None else 20
    rows = []
    for lam in spec.lambdas:
        result = run(topo, _sim_config(spec, lam, horizon, trials), jobs=spec.jobs)
        q = result.aggregate.mean[:, 0]
        h = len(q) // 2
        slope = growth_slope(result.aggregate.times, q)
        rows.append({
            "lambda": lam,
            "slope": slope,
            "tail_mean": float(q[h:].mean()) if len(q) else 0.0,
            "throughput": result.summary["throughput"],
            "stable": slope < spec.slope_tol,
        })
    cap, mask = min_cut(insert_feedback_delay_chain(topo, spec.delay) if spec.delay else topo)
    stable = [r["lambda"] for r in rows if r["stable"]]
    unstable = [r["lambda"] for r in rows if not r["stable"]]
    report = {
        "min_cut": cap,
        "slope_tol": spec.slope_tol,
        "horizon": horizon,
        "trials": trials,
        "seed": spec.seed,
        "rows": rows,
        "frontier": {
            "last_stable": max((x for x in stable if not unstable or x < min(unstable)), default=None),
            "first_unstable": min(unstable, default=None),
        },
    }
    spec.out.mkdir(parents=True, exist_ok=True)
    with open(spec.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "slope", "tail_mean", "throughput", "stable"])
        for r in rows:
            w.writerow([repr(r["lambda"]), repr(r["slope"]), repr(r["tail_mean"]),
                        repr(r["throughput"]), int(r["stable"])])
    _write_json(spec.out / "sweep.json", report)
    print(f"{'lambda':>8} {'slope':>12} {'tail mean':>12}  stable")
    for r in rows:
        print(f"{r['lambda']:>8.4f} {r['slope']:>12.6f} {r['tail_mean']:>12.3f}  {r['stable']}")
    print(f"min-cut {cap:.6f}; frontier between {report['frontier']['last_stable']} "
          f"and {report['frontier']['first_unstable']}")
    return report


def cmd_drift_scan(spec: ExperimentSpec) -> lyapunov.DriftRegion:
    topo = spec.topology()
    params = lyapunov.build_coefficients(topo.n, spec.N, spec.delta)
    threshold = lyapunov.lemma_threshold(topo, spec.N, spec.delta)
    if spec.threshold_frac is not None:
        lam = spec.threshold_frac * threshold
    elif spec.lam is not None:
        lam = spec.lam
    else:
        lam = topo.arrival_rate
    region = lyapunov.scan_positive_drift(topo, params, lam, spec.box, mode=spec.scan_mode, seed=spec.seed)
    _write_json(spec.out / "drift.json", region.to_json())
    print(f"lambda {lam:.6f} (threshold {threshold:.6f}) box {spec.box}: "
          f"{region.positive_drift_count} positive-drift states, bounding box {region.bounding_box}")
    print(f"verdict: {region.verdict}")
    return region


def cmd_stationary(spec: ExperimentSpec) -> dict:
    topo = spec.topology()
    if spec.lam is not None:
        topo = topo.with_arrival_rate(spec.lam)
    res = markov.solve_stationary_truncated(topo, spec.cap)
    report = {
        "lambda": topo.arrival_rate,
        "cap": spec.cap,
        "states": len(res.states),
        "boundary_mass": res.boundary_mass,
        "mean_queue": {nodes_label(k, topo.n): v for k, v in enumerate(res.mean_queue)},
    }
    _write_json(spec.out / "stationary.json", report)
    if spec.dump_generator is not None:
        res.write_generator(spec.dump_generator)
    print("stationary mean queue " + " ".join(f"{k}={v:.6f}" for k, v in report["mean_queue"].items()))
    print(f"boundary mass {res.boundary_mass:.3g}")
    return report


# -- argument parsing --------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erasurenet", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lambdas", type=_float_list, default=[], help="comma-separated grid for sweep")
    p.add_argument("--slots", "--horizon", dest="slots", type=float, help="slots (slotted) or time units (async)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", choices=("slotted", "async"), default="slotted")
    p.add_argument("--delay", type=int, default=0, help="lossless hops appended after the destination")
    p.add_argument("--grid", type=float, default=1.0, help="async sampling interval")
    p.add_argument("--box", type=int, default=300)
    p.add_argument("--N", dest="N", type=float, default=lyapunov.DEFAULT_N)
    p.add_argument("--delta", type=float, default=lyapunov.DEFAULT_DELTA)
    p.add_argument("--threshold-frac", type=float)
    p.add_argument("--scan-mode", choices=("auto", "exhaustive", "sampled"), default="auto")
    p.add_argument("--cap", type=int, default=40)
    p.add_argument("--slope-tol", type=float, default=DEFAULT_SLOPE_TOL)
    p.add_argument("--dump-generator", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


COMMANDS = {
    "analyze-cuts": cmd_analyze_cuts,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep_lambda,
    "drift-scan": cmd_drift_scan,
    "stationary": cmd_stationary,
    "reproduce-fig4": cmd_reproduce_fig4,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = vars(args)
    opts.pop("verbose")
    spec = ExperimentSpec(**opts)
    log.debug("mode %s, spec %s", spec.mode, spec)
    try:
        spec.validate()
        result = COMMANDS[spec.mode](spec)
    except (ConfigError, TopologyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if isinstance(result, lyapunov.DriftRegion) and not result.interior:
        print("inconclusive: positive-drift states reach the scan boundary; enlarge --box", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
