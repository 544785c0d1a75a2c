"""Command-line front end: run solver configurations, compare runs, self-check.

``taudg run config.ini`` executes one configuration and writes its artifacts
under ``<output root>/<run name>/``.  The output root is the config's
``run.output`` unless the TAUDG_OUTPUT_ROOT environment variable overrides
it.  ``taudg compare <dir>...`` tabulates finished runs of the same case and
reports speed-ups as work-unit ratios against the first run given.  ``taudg
check`` exercises a suite of exact invariants on tiny meshes and is the
quickest way to validate an installation.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, adaptation, artifacts, config, mesh, multigrid
from . import physics, spectral, tau, timestep
from .errors import ConfigError, TaudgError
from .fields import NodalField, OrderField, transfer
from .operators import DGOperator

RK3_BATCH = 100  # residual history granularity for plain pseudo-time runs


# --- run pipelines -------------------------------------------------------------


def _run_rk3(cfg, msh, law):
    orders = OrderField.uniform(msh.num_elements, cfg.order)
    op = DGOperator(msh, law, orders)
    Q = NodalField.zeros(orders)
    history = []
    t0 = time.perf_counter()
    sweeps = 0
    rnorm = op.residual_norm(Q)
    while rnorm > cfg.tolerance and sweeps < cfg.max_sweeps:
        batch = min(RK3_BATCH, cfg.max_sweeps - sweeps)
        timestep.smooth(op, Q, batch, cfg.time)
        sweeps += batch
        rnorm = op.residual_norm(Q)
        history.append({
            "cycle": sweeps, "level": 1, "phase": "rk3", "sweeps": batch,
            "rnorm": rnorm, "work_units": float(sweeps),
            "wall": time.perf_counter() - t0, "note": "",
        })
    return Q, op, history, float(sweeps), rnorm


def _run_fas(cfg, msh, law):
    orders = OrderField.uniform(msh.num_elements, cfg.order)
    solver = multigrid.FASSolver(msh, law, orders, cfg.smoother, cfg.time)
    solver.solve_fmg(cfg.tolerance, level_tol=cfg.level_tolerance,
                     max_cycles=cfg.max_cycles)
    op = solver.finest.op
    rnorm = op.residual_norm(solver.Q)
    return solver.Q, op, solver.log, solver.work_units, rnorm


def _run_adaptive(cfg, msh, law):
    if cfg.mode == "fas+adapt":
        run = adaptation.run_single_stage(
            msh, law, cfg.order, cfg.adapt, final_tol=cfg.tolerance,
            level_tol=cfg.level_tolerance, smoother=cfg.smoother,
            time_config=cfg.time, max_cycles=cfg.max_cycles)
    else:
        run = adaptation.run_multi_stage(
            msh, law, cfg.adapt, final_tol=cfg.tolerance,
            level_tol=cfg.level_tolerance, smoother=cfg.smoother,
            time_config=cfg.time, max_cycles=cfg.max_cycles)
    op = DGOperator(msh, law, run.orders)
    rnorm = op.residual_norm(run.Q)
    return run, op, rnorm


def _execute(cfg, out_dir: Path) -> artifacts.RunArtifacts:
    msh = cfg.build_mesh()
    law = cfg.build_law()
    maps, reports = (), ()
    if cfg.mode == "rk3":
        Q, op, history, work, rnorm = _run_rk3(cfg, msh, law)
    elif cfg.mode == "fas":
        Q, op, history, work, rnorm = _run_fas(cfg, msh, law)
    else:
        run, op, rnorm = _run_adaptive(cfg, msh, law)
        Q, history, work = run.Q, run.history, run.work_units
        maps, reports = run.maps, run.reports
    error = op.l2_error(Q) if law.exact is not None else None
    return artifacts.write_run(
        out_dir, cfg, Q=Q, history=history, work_units=work,
        residual_norm=rnorm, error_l2=error, maps=maps, reports=reports)


def output_root(cfg) -> Path:
    return Path(os.environ.get("TAUDG_OUTPUT_ROOT") or cfg.output)


def _cmd_run(args) -> int:
    cfg = config.load_config(args.config, overrides=args.override)
    out_dir = output_root(cfg) / cfg.name
    try:
        result = _execute(cfg, out_dir)
    except TaudgError as exc:
        artifacts.write_failure(out_dir, cfg, exc)
        print(f"run failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        print(f"failure record: {out_dir / 'failure.json'}", file=sys.stderr)
        return 1
    s = result.summary
    err = s.get("error_l2")
    print(f"{cfg.name}: mode={cfg.mode} dofs={s['dofs']} "
          f"work_units={s['work_units']:.4g} residual={s['residual_norm']:.3e}"
          + (f" error_l2={err:.4g}" if err is not None else ""))
    print(f"artifacts: {result.out_dir}")
    return 0


def _cmd_compare(args) -> int:
    try:
        rows = _comparison_rows(args.runs)
    except ConfigError as exc:
        print(f"compare failed: {exc}", file=sys.stderr)
        return 2
    print(artifacts.comparison_table(rows, fmt=args.format), end="")
    return 0


def _comparison_rows(run_dirs):
    if len(run_dirs) < 2:
        raise ConfigError("need at least two run directories to compare")
    summaries = [artifacts.load_summary(d) for d in run_dirs]
    cases = {s["case"] for s in summaries}
    if len(cases) != 1:
        raise ConfigError(
            "runs solve different cases: " + ", ".join(sorted(cases)))
    base = summaries[0]["work_units"]
    rows = []
    for d, s in zip(run_dirs, summaries):
        rows.append({
            "name": s["name"], "mode": s["mode"],
            "work_units": s["work_units"],
            "wall_time": artifacts.last_wall_time(d),
            "dofs": s["dofs"], "error_l2": s.get("error_l2"),
            "speedup": base / s["work_units"] if s["work_units"] else 1.0,
        })
    return rows


# --- self-check ----------------------------------------------------------------


def _check_quadrature():
    q = spectral.gauss_nodes(4)
    for k in range(2 * 4 + 2):
        exact = (1.0 - (-1.0) ** (k + 1)) / (k + 1)
        got = float(q.weights @ q.nodes ** k)
        if abs(got - exact) > 1e-13:
            return f"degree-{k} moment off by {abs(got - exact):.2e}"
    return None


def _check_free_stream():
    def warp(x, y):
        s = np.sin(np.pi * x) * np.sin(np.pi * y)
        return x + 0.06 * s, y + 0.07 * s

    m = mesh.build_cartesian(2, 1, mapping_order=(3, 3), warp=warp)
    law = physics.AdvectionDiffusion((1.3, -0.7), mu=0.3).with_manufactured(
        lambda x, y: 2.5 + 0.0 * x, lambda x, y: 0.0 * x)
    op = DGOperator(m, law, OrderField(np.array([[4, 5], [6, 3]])))
    q = op.project_function(law.exact)
    worst = max(op.apply(q).norm_inf(), op.apply(q, isolated=True).norm_inf())
    return None if worst < 1e-12 else f"free-stream residual {worst:.2e}"


def _check_transfer():
    def poly(x, y):
        return (x + 0.3) * (y - 0.2) + 0.1 * x * x

    m = mesh.build_cartesian(2, 1)
    lo = OrderField.uniform(m.num_elements, 2)
    hi = OrderField.uniform(m.num_elements, 5)
    law = physics.AdvectionDiffusion((1.0, 0.5)).with_manufactured(
        poly, lambda x, y: 0.0 * x)
    op = DGOperator(m, law, lo)
    q = op.project_function(poly)
    round_trip = transfer(transfer(q, hi), lo)
    worst = max(float(np.abs(a - b).max())
                for a, b in zip(round_trip.blocks, q.blocks))
    return None if worst < 1e-12 else f"transfer round-trip error {worst:.2e}"


def _check_jump_rules():
    m = mesh.build_cartesian(3, 3)
    rng = np.random.default_rng(3)
    field = OrderField(rng.integers(1, 9, size=(m.num_elements, 2)))
    for rule in adaptation.JUMP_RULES:
        limited = adaptation.limit_jumps(m, field, rule)
        again = adaptation.limit_jumps(m, limited, rule)
        if not limited.same_orders(again):
            return f"rule {rule!r} is not idempotent"
        if np.any(limited.orders < field.orders):
            return f"rule {rule!r} lowered an order"
    return None


def _check_extrapolation():
    of = OrderField.uniform(1, 6)
    tmap = tau.TauMap(of, tau.EstimationContext(1e-3, 0.0, True))
    for n in range(1, 6):
        tmap.record(0, 1, n, 10.0 ** (1.0 - 0.75 * n))
        tmap.record(0, 2, n, 10.0 ** (0.5 - 1.25 * n))
    tau.extrapolate_map(tmap, 9)
    worst = 0.0
    for d, (a, b) in ((1, (1.0, -0.75)), (2, (0.5, -1.25))):
        for n in range(6, 10):
            exact = 10.0 ** (a + b * n)
            got = tmap.directional(0, d)[n]
            worst = max(worst, abs(got - exact) / exact)
    return None if worst < 1e-12 else f"extrapolation off by {worst:.2e}"


def _check_watertight():
    m = mesh.build_cartesian(3, 2, grading=("south", 3.0),
                             mapping_order=(2, 2))
    mesh.check_watertight(m)
    return None


CHECKS = (
    ("quadrature moments", _check_quadrature),
    ("curved free-stream", _check_free_stream),
    ("order-transfer round trip", _check_transfer),
    ("jump-rule idempotence", _check_jump_rules),
    ("log-linear extrapolation", _check_extrapolation),
    ("watertight graded mesh", _check_watertight),
)


def _cmd_check(_args) -> int:
    failed = 0
    for name, fn in CHECKS:
        try:
            detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, keep checking
            detail = f"{type(exc).__name__}: {exc}"
        if detail is None:
            print(f"ok   {name}")
        else:
            print(f"FAIL {name}: {detail}")
            failed += 1
    if failed:
        print(f"{failed} of {len(CHECKS)} checks failed", file=sys.stderr)
        return 1
    print(f"all {len(CHECKS)} checks passed")
    return 0


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taudg",
        description="anisotropic p-adaptive DG steady solver")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configuration file")
    p_run.add_argument("config", help="INI configuration file")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="replace a config value (repeatable)")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate two or more runs")
    p_cmp.add_argument("runs", nargs="+", help="run output directories")
    p_cmp.add_argument("--format", choices=config.TABLE_FORMATS,
                       default="markdown")
    p_cmp.set_defaults(func=_cmd_compare)

    p_chk = sub.add_parser("check", help="run the invariant self-test suite")
    p_chk.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
