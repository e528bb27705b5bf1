"""Command-line entry point: ``coarsegrain <subcommand> [options]``.

Exit codes: 0 success, 1 numerical guard tripped, 2 configuration error.
Every option may also be given through an environment variable named
``COARSEGRAIN_<OPTION>`` (for example ``COARSEGRAIN_SEED``); explicit flags win.
"""
from __future__ import annotations

import argparse
import itertools
import math
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io
from .compare import quantum_vs_liouville
from .core import CoherentStateParams, Grid, NumericalGuardError, SlotPartition, coherent_state
from .ehrenfest import ehrenfest_lower_bound, order_of_magnitude, scenario_table
from .operators import (
    QuadratureRule,
    build_povm_element,
    build_stripe_projectors,
    commutator_check,
    discrete_derivative_error,
    interior_x_indices,
    projectivity_error_closed_form,
    projectivity_error_numeric,
    restrict_x,
    torus_partition,
)
from .quantum import evolve_series, slot_probabilities
from .scenarios import ConfigError, Scenario, builtin, load_scenario
from .trajectory import record_agreement, repeated_measurement_run, run_ensemble

ENV_PREFIX = "COARSEGRAIN_"
DEFAULT_OUT = "coarsegrain-out"

# Reference torus for the operator suite: 256 points, packet width 4.5 grid units.
OP_GRID = Grid(-128.0, 128.0, 256)
OP_SIGMA = 4.5


class _Writer:
    """Single writer per run; records every output for the manifest."""

    def __init__(self, out: Path):
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"invalid field: output ({exc})") from None
        self.out = out
        self.files: list[str] = []

    def text(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.files.append(name)

    def json(self, name: str, obj) -> None:
        self.text(name, io.dumps(obj))

    def manifest(self, command: str, sc: Scenario, seed: int, extra=None) -> None:
        m = io.manifest(command, sc.name, sc.config_hash(), seed, self.files, extra)
        (self.out / "manifest.json").write_text(io.dumps(m))


def _scenario(args) -> Scenario:
    if args.scenario and args.builtin:
        raise ConfigError("give either --scenario or --builtin, not both")
    if args.scenario:
        if not Path(args.scenario).is_file():
            raise ConfigError(f"scenario file not found: {args.scenario}")
        return load_scenario(args.scenario)
    return builtin(args.builtin or args.default_builtin)


def _seed(args, sc: Scenario) -> int:
    return int(args.seed) if args.seed is not None else sc.seed


def _writer(args, sc: Scenario, command: str) -> _Writer:
    base = args.out or sc.output or DEFAULT_OUT
    return _Writer(Path(base) / f"{sc.name}-{command}")


def _scaled_partition(sc: Scenario) -> SlotPartition:
    """Partition on the reference torus with the scenario's slot-to-packet ratios."""
    rx = sc.partition.delta_x / sc.state.sigma_x
    rp = sc.partition.delta_p / sc.state.sigma_p
    sp = 0.5 / OP_SIGMA
    return SlotPartition(rx * OP_SIGMA, rp * sp, -0.5 * rx * OP_SIGMA, -0.5 * rp * sp)


def cmd_povm_check(args, sc: Scenario) -> int:
    part = _scaled_partition(sc)
    P = build_povm_element(0, 0, part, OP_SIGMA, OP_GRID)
    en = projectivity_error_numeric(P)
    ec = projectivity_error_closed_form(part, OP_SIGMA)
    tor = torus_partition(OP_GRID, 4, 3)
    st = build_stripe_projectors(tor, OP_SIGMA, OP_GRID)
    idx = interior_x_indices(OP_GRID, 5.0 * OP_SIGMA)
    comp = restrict_x(st.completeness(), idx)
    comp_err = float(np.max(np.abs(comp - np.eye(len(idx)))))
    cr = commutator_check(0, 0, tor, OP_GRID, OP_SIGMA, stripes=st)
    dr = discrete_derivative_error(0, 0, part, OP_GRID, OP_SIGMA, QuadratureRule.for_partition(part, OP_SIGMA))
    result = {
        "ratio_x": part.delta_x / OP_SIGMA,
        "ratio_p": part.delta_p / (0.5 / OP_SIGMA),
        "eps_numeric": en,
        "eps_closed_form": ec,
        "eps_ratio": en / ec,
        "completeness_max_error": comp_err,
        "commutator": {k: getattr(cr, k) for k in (
            "residual_p", "residual_x", "residual_p_bare", "residual_x_bare",
            "stripe_term_p", "stripe_term_x")},
        "derivative_error": {"eps_d": dr.eps_d, "predicted": dr.predicted,
                             "derivative_norm": dr.derivative_norm},
    }
    w = _writer(args, sc, "povm-check")
    w.json("povm_check.json", result)
    w.manifest("povm-check", sc, _seed(args, sc))
    print(f"eps_numeric = {en:.6g}  eps_closed_form = {ec:.6g}  ratio = {en / ec:.4f}")
    print(f"completeness max error (interior) = {comp_err:.3g}")
    print(f"commutator residual p = {cr.residual_p:.3g} (bare {cr.residual_p_bare:.3g}), "
          f"x = {cr.residual_x:.3g} (bare {cr.residual_x_bare:.3g})")
    print(f"eps_D = {dr.eps_d:.6g}  (second-order estimate {dr.predicted:.6g})")
    return 0


def _times(sc: Scenario) -> list[float]:
    if not sc.schedule.times:
        raise ConfigError("missing field: schedule.times")
    if sc.schedule.times[0] <= 0:
        raise ConfigError("invalid field: schedule.times (must be positive)")
    return list(sc.schedule.times)


def cmd_evolve(args, sc: Scenario) -> int:
    times = _times(sc)
    cmp = quantum_vs_liouville(sc.state, sc.hamiltonian, sc.partition, sc.grid, times, sc.propagator())
    w = _writer(args, sc, "evolve")
    for k, (q, c) in enumerate(zip(cmp.quantum, cmp.classical)):
        w.text(f"quantum_{k:04d}.csv", io.distribution_csv(q))
        w.text(f"classical_{k:04d}.csv", io.distribution_csv(c))
    w.text("times.csv", io.timeseries_csv({"t": times, "index": list(range(len(times)))}))
    w.manifest("evolve", sc, _seed(args, sc))
    print(f"wrote {len(times)} quantum and classical slot distributions to {w.out}")
    return 0


def cmd_compare(args, sc: Scenario) -> int:
    times = _times(sc)
    cmp = quantum_vs_liouville(sc.state, sc.hamiltonian, sc.partition, sc.grid, times, sc.propagator())
    bound = ehrenfest_lower_bound(sc.hamiltonian, sc.partition, float(sc.partition.x_center(
        math.floor((sc.state.x0 - sc.partition.x_origin) / sc.partition.delta_x))))
    crossing = cmp.first_crossing(args.threshold)
    w = _writer(args, sc, "compare")
    w.text("tv.csv", io.timeseries_csv({"t": times, "tv": cmp.tv}))
    w.json("compare.json", {"threshold": args.threshold, "first_crossing": crossing,
                            "ehrenfest_bound": bound.t_lower_bound,
                            "crossing_after_bound": bool(crossing >= bound.t_lower_bound),
                            "max_tv": max(cmp.tv)})
    w.manifest("compare", sc, _seed(args, sc))
    print(f"max TV = {max(cmp.tv):.4f}; first crossing of {args.threshold} at t = {crossing:.6g}; "
          f"lower bound = {bound.t_lower_bound:.6g}")
    return 0


def cmd_ehrenfest(args, sc: Scenario) -> int:
    part = sc.partition
    i = math.floor((sc.state.x0 - part.x_origin) / part.delta_x)
    j = math.floor((sc.state.p0 - part.p_origin) / part.delta_p)
    r = ehrenfest_lower_bound(sc.hamiltonian, part, float(part.x_center(i)), slot=(i, j), label=sc.name)
    report = r.as_dict()
    t_sim = r.t_lower_bound
    if sc.units is not None:
        t_si = sc.units.to_si(t_sim, time=1)
        report["t_lower_bound_seconds"] = t_si
        report["order_of_magnitude_seconds"] = order_of_magnitude(t_si)
        print(f"{sc.name}: t_E lower bound = {t_si:.4g} s (order 10^{order_of_magnitude(t_si)})")
    else:
        print(f"{sc.name}: t_E lower bound = {t_sim:.6g} (simulation units)")
    table = scenario_table()
    rows = table.rows()
    if sc.collision is not None:
        tau = 1.0 / (sc.collision["density"] * sc.collision["cross_section"] * sc.collision["speed"])
        report["collision_time_seconds"] = tau
        t_cmp = report.get("t_lower_bound_seconds", t_sim)
        report["collision_shorter"] = bool(tau < t_cmp)
        print(f"collision time = {tau:.4g} s; shorter than t_E: {tau < t_cmp}")
    for row in rows:
        print(f"  table {row['scenario']:>13}: {row['quantity']} = {row['seconds']:.4g} s "
              f"(order 10^{row['order_of_magnitude']})")
    w = _writer(args, sc, "ehrenfest")
    w.json("ehrenfest.json", {"report": report, "table": rows})
    w.manifest("ehrenfest", sc, _seed(args, sc))
    return 0


def _trajectory_stats(sc: Scenario, tau, n: int, count: int, seed: int, threads: int):
    if tau is None:
        raise ConfigError("missing field: schedule.tau")
    psi0 = coherent_state(sc.state, sc.grid)
    cfg = sc.propagator()

    def run(s: int):
        return repeated_measurement_run(psi0, sc.hamiltonian, sc.partition, sc.state.sigma_x,
                                        tau, n, s, cfg)

    records = run_ensemble(run, seed, count, threads)
    scores = [record_agreement(r, sc.hamiltonian, sc.partition) for r in records]
    return records, scores


def cmd_trajectory(args, sc: Scenario) -> int:
    seed = _seed(args, sc)
    count = args.count or sc.ensemble_count
    n = sc.schedule.n
    records, scores = _trajectory_stats(sc, sc.schedule.tau, n, count, seed, args.threads)
    frac = [s.fraction for s in scores]
    w = _writer(args, sc, "trajectory")
    w.json("trajectories.json", {
        "records": [dict(r.as_dict(), agreement=s.fraction, mean_distance=s.mean_distance)
                    for r, s in zip(records, scores)],
        "mean_agreement": float(np.mean(frac)),
        "truncated": sum(r.truncated for r in records),
    })
    w.manifest("trajectory", sc, seed, {"count": count})
    print(f"{count} trajectories, n = {n}: mean agreement = {np.mean(frac):.4f}, "
          f"mean index distance = {np.mean([s.mean_distance for s in scores]):.4f}")
    return 0


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"invalid sweep list {text!r}") from None


def cmd_sweep(args, sc: Scenario) -> int:
    dxs = _floats(args.delta_x) or [sc.partition.delta_x]
    dps = _floats(args.delta_p) or [sc.partition.delta_p]
    taus = _floats(args.tau) or ([sc.schedule.tau] if sc.schedule.tau else [None])
    seed = _seed(args, sc)
    cols: dict[str, list[float]] = {k: [] for k in (
        "delta_x", "delta_p", "tau", "eps_closed_form", "ehrenfest_bound", "agreement", "mean_distance")}
    for dx, dp, tau in itertools.product(dxs, dps, taus):
        if not (dx > 0 and dp > 0):
            raise ConfigError("invalid sweep list (slot sides must be positive)")
        part = SlotPartition(dx, dp, sc.partition.x_origin, sc.partition.p_origin)
        i = math.floor((sc.state.x0 - part.x_origin) / dx)
        bound = ehrenfest_lower_bound(sc.hamiltonian, part, float(part.x_center(i)))
        agree, dist = math.nan, math.nan
        if tau is not None and args.count > 0:
            sub = Scenario(sc.name, sc.grid, part, sc.hamiltonian, sc.state, sc.dt, sc.schedule,
                           sc.channel, sc.ensemble_count, sc.collision, sc.units, sc.seed,
                           sc.output, sc.raw)
            _, scores = _trajectory_stats(sub, tau, sc.schedule.n, args.count, seed, args.threads)
            agree = float(np.mean([s.fraction for s in scores]))
            dist = float(np.mean([s.mean_distance for s in scores]))
        row = (dx, dp, math.nan if tau is None else tau,
               projectivity_error_closed_form(part, sc.state.sigma_x), bound.t_lower_bound, agree, dist)
        for k, v in zip(cols, row):
            cols[k].append(v)
    w = _writer(args, sc, "sweep")
    w.text("sweep.csv", io.timeseries_csv(cols))
    w.manifest("sweep", sc, seed, {"count": args.count})
    print(f"sweep of {len(cols['delta_x'])} points written to {w.out / 'sweep.csv'}")
    return 0


COMMANDS: dict[str, tuple[Callable, str, str]] = {
    "povm-check": (cmd_povm_check, "harmonic", "operator suite: projectivity, completeness, commutators, eps_D"),
    "evolve": (cmd_evolve, "quartic", "quantum and classical slot distributions at output times"),
    "compare": (cmd_compare, "quartic", "TV time series quantum vs Liouville and first crossing"),
    "ehrenfest": (cmd_ehrenfest, "micro", "Ehrenfest lower bound and the scenario table"),
    "trajectory": (cmd_trajectory, "harmonic", "repeated-measurement runs and agreement statistics"),
    "sweep": (cmd_sweep, "harmonic", "parameter grid over delta_x, delta_p and tau"),
}


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coarsegrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, default, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.set_defaults(default_builtin=default)
        p.add_argument("--scenario", default=_env("scenario"), help="scenario JSON file")
        p.add_argument("--builtin", default=_env("builtin"),
                       help="built-in preset: micro, macro, harmonic, quartic, cloud-chamber")
        p.add_argument("--seed", type=int, default=_env("seed"), help="master seed (unsigned 64-bit)")
        p.add_argument("--out", default=_env("out"), help="output directory")
        p.add_argument("--threads", type=int, default=int(_env("threads", 1)), help="worker threads")
        if name in ("trajectory", "sweep"):
            p.add_argument("--count", type=int, default=int(_env("count", 0 if name == "trajectory" else 4)),
                           help="trajectories per point (trajectory: default from scenario)")
        if name == "compare":
            p.add_argument("--threshold", type=float, default=float(_env("threshold", 0.3)))
        if name == "sweep":
            p.add_argument("--delta-x", default=_env("delta_x"), help="comma-separated slot widths")
            p.add_argument("--delta-p", default=_env("delta_p"), help="comma-separated slot heights")
            p.add_argument("--tau", default=_env("tau"), help="comma-separated measurement intervals")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is not None and not 0 <= int(args.seed) < 2**64:
            raise ConfigError("invalid field: seed (expected an unsigned 64-bit integer)")
        if args.threads < 1:
            raise ConfigError("invalid field: threads (must be >= 1)")
        sc = _scenario(args)
        return COMMANDS[args.command][0](args, sc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc}\nhint: reduce propagator.dt, widen the grid, "
              f"or refine the quadrature", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
