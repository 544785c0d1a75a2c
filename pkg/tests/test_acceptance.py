"""Acceptance gate: ten end-to-end checks with frozen configurations.

Each test prints one verdict line (run with ``-s`` to see them all) and
asserts the pinned bar.  Configurations and tolerances are frozen; expected
magnitudes come from independent oracles or paired reference runs inside
each test, never from the implementation under test.
"""

import time
import warnings

import numpy as np
import numpy.polynomial.legendre as npleg
import pytest

from taudg import (adaptation, cli, fields, mesh, physics, spectral, tau,
                   timestep)
from taudg.adaptation import AdaptConfig, conforming_pass, limit_jumps
from taudg.fields import NodalField, OrderField
from taudg.multigrid import FASSolver, SmootherConfig
from taudg.operators import DGOperator

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def _verdict(num, label, ok, detail):
    line = f"[{num:2d}] {label:34s} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    assert ok, line


def _solve_uniform(msh, law, order, tol, fmg=True, max_cycles=300):
    solver = FASSolver(msh, law, OrderField.uniform(msh.num_elements, order))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if fmg:
            solver.solve_fmg(tol, max_cycles=max_cycles)
        else:
            solver.converge(tol, max_cycles=max_cycles)
    return solver


# -- 1 ---------------------------------------------------------------------------


def test_01_spectral_error_decay():
    t0 = time.perf_counter()
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    tols = {2: 1e-4, 3: 1e-5, 4: 1e-6, 5: 1e-7, 6: 1e-8, 7: 1e-9, 8: 2e-10}
    errs, prev = {}, None
    for n, tol in tols.items():
        solver = FASSolver(msh, law, OrderField.uniform(msh.num_elements, n))
        if prev is None:
            solver.solve_fmg(tol, max_cycles=300)
        else:
            solver.set_state(fields.transfer(prev, solver.finest.orders))
            solver.converge(tol, max_cycles=300)
        errs[n] = solver.finest.op.l2_error(solver.Q)
        prev = solver.Q
    ratios = [errs[n + 1] / errs[n] for n in range(4, 8)]
    elapsed = time.perf_counter() - t0
    ok = max(ratios) < 0.5 and all(e > 0 for e in errs.values()) and elapsed < 60
    _verdict(1, "spectral error decay", ok,
             f"max ratio {max(ratios):.3f} (<0.5), {elapsed:.0f}s (<60s)")


# -- 2 ---------------------------------------------------------------------------


def test_02_free_stream_preservation():
    def warp(x, y):
        s = np.sin(np.pi * x) * np.sin(np.pi * y)
        return x + 0.06 * s, y + 0.07 * s

    msh = mesh.build_cartesian(2, 1, mapping_order=(3, 3), warp=warp)
    law = physics.AdvectionDiffusion((1.3, -0.7), mu=0.3).with_manufactured(
        lambda x, y: 2.5 + 0.0 * x, lambda x, y: 0.0 * x)
    op = DGOperator(msh, law, OrderField(np.array([[4, 5], [6, 3]])))
    q = op.project_function(law.exact)
    worst = max(op.apply(q).norm_inf(), op.apply(q, isolated=True).norm_inf())
    _verdict(2, "free-stream preservation", worst <= 1e-12,
             f"|F(const)| {worst:.2e} (<=1e-12)")


# -- 3 ---------------------------------------------------------------------------


def _modal_transfer(n_from, n_to):
    qf = spectral.gauss_nodes(n_from)
    qt = spectral.gauss_nodes(n_to)
    k = np.arange(n_from + 1)
    analysis = (k[:, None] + 0.5) * qf.weights[None, :] * npleg.legvander(
        qf.nodes, n_from).T
    keep = min(n_from, n_to) + 1
    return npleg.legvander(qt.nodes, n_to)[:, :keep] @ analysis[:keep]


def _apply_2d(mat, src, target_orders):
    out = NodalField.zeros(target_orders)
    for e in range(target_orders.num_elements):
        out.set_element(e, np.einsum("ai,bj,ij->ab", mat, mat, src.element(e)))
    return out


def test_03_fixed_point_and_two_grid_reference():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")

    solver = _solve_uniform(msh, law, 3, 1e-12, fmg=False)
    solver.v_cycle()
    after = solver.finest.op.residual_norm(solver.Q)

    # independent two-grid run with standalone transfer matrices
    beta1, beta2, coarse_sweeps = 40, 40, 120
    of_f = OrderField.uniform(4, 2)
    of_c = OrderField.uniform(4, 1)
    tcfg = timestep.TimeConfig()
    op_f, op_c = DGOperator(msh, law, of_f), DGOperator(msh, law, of_c)
    down, up = _modal_transfer(2, 1), _modal_transfer(1, 2)
    Q = NodalField.zeros(of_f)
    timestep.smooth(op_f, Q, beta1, tcfg)
    r = op_f.residual(Q)
    Qc = _apply_2d(down, Q, of_c)
    Qc0 = Qc.copy()
    Sc = op_c.m_inv_apply(Qc) + _apply_2d(down, r, of_c)
    timestep.smooth(op_c, Qc, coarse_sweeps, tcfg, source=Sc)
    Q = Q + _apply_2d(up, Qc - Qc0, of_f)
    timestep.smooth(op_f, Q, beta2, tcfg)
    ref_norm = op_f.residual_norm(Q)

    pinned = FASSolver(msh, law, of_f, smoother=SmootherConfig(
        pre_sweeps=beta1, post_sweeps=beta2,
        coarsest_sweeps=coarse_sweeps, max_batches=1), time_config=tcfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pinned.v_cycle()
    gap = abs(pinned.finest.op.residual_norm(pinned.Q) - ref_norm)

    ok = after <= 1e-10 and gap <= 1e-13
    _verdict(3, "FAS fixed point / two-grid match", ok,
             f"post-cycle residual {after:.2e} (<=1e-10), "
             f"two-grid gap {gap:.2e} (<=1e-13)")


# -- 4 ---------------------------------------------------------------------------


def test_04_multigrid_beats_pseudo_time():
    t0 = time.perf_counter()
    msh = mesh.build_cartesian(3, 3)
    law = physics.make_case("advdiff-sine")
    orders = OrderField.uniform(msh.num_elements, 6)

    solver = _solve_uniform(msh, law, 6, 1e-9)
    fas_wu = solver.work_units

    op = DGOperator(msh, law, orders)
    Q = NodalField.zeros(orders)
    sweeps, rnorm = 0, op.residual_norm(Q)
    while rnorm > 1e-9 and sweeps < 400000:
        timestep.smooth(op, Q, 500, timestep.TimeConfig())
        sweeps += 500
        rnorm = op.residual_norm(Q)
    elapsed = time.perf_counter() - t0
    ratio = sweeps / fas_wu
    ok = rnorm <= 1e-9 and ratio >= 5.0 and elapsed < 600
    _verdict(4, "multigrid work advantage", ok,
             f"rk3/fas work {ratio:.1f}x (>=5x), {elapsed:.0f}s (<600s)")


# -- 5 ---------------------------------------------------------------------------


def test_05_directional_estimates_vs_oracle():
    tau_max = 1e-4
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    solver = _solve_uniform(msh, law, 6, tau_max / 10, fmg=False)
    tm = tau.estimate(msh, law, solver.Q.copy(), tau_max, isolated=True,
                      fine_op=solver.finest.op)
    worst, checked = 0.0, 0
    for d in (1, 2):
        for n in range(1, 6):
            o = (n, 6) if d == 1 else (6, n)
            _, oracle = tau.exact_tau_oracle(
                msh, law, OrderField.uniform(msh.num_elements, *o))
            for e in range(msh.num_elements):
                if oracle[e] > tau_max:
                    checked += 1
                    rel = abs(tm.tau[e][d - 1][n] - oracle[e]) / oracle[e]
                    worst = max(worst, rel)
    ok = checked >= 20 and worst <= 0.20
    _verdict(5, "estimator vs injected-exact oracle", ok,
             f"worst rel err {worst:.3f} (<=0.20) over {checked} entries")


# -- 6 ---------------------------------------------------------------------------


def test_06_decomposition_and_extrapolation():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    solver = _solve_uniform(msh, law, 4, 1e-9, fmg=False)
    Q = solver.Q.copy()
    tm = tau.estimate(msh, law, Q, 1e-6, isolated=True,
                      fine_op=solver.finest.op)
    # assembled sums vs restrict-both-evaluate-once; 0.3 decades either way
    worst_dec = 0.0
    for n1 in range(2, 4):
        for n2 in range(2, 4):
            of = OrderField.uniform(msh.num_elements, n1, n2)
            opc = DGOperator(msh, law, of)
            bf = opc.truncation(fields.transfer(Q, of), isolated=True)
            for e in range(msh.num_elements):
                dev = abs(np.log10(tm.combined(e, n1, n2) / bf[e]))
                worst_dec = max(worst_dec, dev)

    law_a = physics.make_case("advdiff-aniso")
    solver_a = _solve_uniform(msh, law_a, 6, 1e-9, fmg=False)
    tm_a = tau.estimate(msh, law_a, solver_a.Q.copy(), 1e-6, isolated=True,
                        fine_op=solver_a.finest.op)
    tau.extrapolate_map(tm_a, 8)
    _, oracle = tau.exact_tau_oracle(
        msh, law_a, OrderField.uniform(msh.num_elements, 8, 6))
    ratios = [tm_a.tau[e][0][8] / oracle[e] for e in range(msh.num_elements)]

    of1 = OrderField.uniform(1, 6)
    tm_g = tau.TauMap(of1, tau.EstimationContext(1e-3, 0.0, True))
    for n in range(1, 6):
        tm_g.record(0, 1, n, 10.0 ** (1.0 - 0.75 * n))
    tau.extrapolate_map(tm_g, 9)
    geo_err = max(
        abs(tm_g.directional(0, 1)[n] - 10.0 ** (1.0 - 0.75 * n))
        / 10.0 ** (1.0 - 0.75 * n) for n in range(6, 10))

    ok = (worst_dec <= np.log10(2.0) + 1e-9
          and all(0.5 <= r <= 2.0 for r in ratios)
          and geo_err <= 1e-12)
    _verdict(6, "decomposition / extrapolation", ok,
             f"inner-map dev {worst_dec:.2f} decades (<=0.30), "
             f"P+2 ratio [{min(ratios):.2f},{max(ratios):.2f}] (in [0.5,2]), "
             f"geometric {geo_err:.1e} (<=1e-12)")


# -- 7 ---------------------------------------------------------------------------


def test_07_boundary_layer_adaptation_efficiency():
    msh = mesh.build_cartesian(2, 5)
    law = physics.make_case("advdiff-boundary-layer", mu=0.005, delta=0.06)
    uniform = _solve_uniform(msh, law, 6, 1e-8)
    dof_u = uniform.finest.orders.dofs()
    err_u = uniform.finest.op.l2_error(uniform.Q)

    cfg = AdaptConfig(tau_max=2.2e-5, n_max=6, jump_rule="strict-one")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        run = adaptation.run_single_stage(msh, law, 6, cfg, final_tol=1e-8)
    dof_ratio = run.orders.dofs() / dof_u
    err_ratio = DGOperator(msh, law, run.orders).l2_error(run.Q) / err_u

    _, dec_oracle = tau.exact_tau_oracle(msh, law, run.orders)
    inner = [d.element for d in run.reports[-1].decisions
             if d.path == "inner-map"]
    frac = float(np.mean([dec_oracle[e] <= cfg.tau_max for e in inner]))

    ok = dof_ratio <= 0.6 and err_ratio <= 2.0 and len(inner) > 0 and frac >= 0.95
    _verdict(7, "boundary-layer adaptation", ok,
             f"dof {dof_ratio:.3f} (<=0.6), err {err_ratio:.2f} (<=2.0), "
             f"oracle-ok {frac:.2f} (>=0.95, {len(inner)} inner)")


# -- 8 ---------------------------------------------------------------------------


def test_08_error_plateau_under_threshold_sweep():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    uniform = _solve_uniform(msh, law, 6, 1e-10)
    err_u = uniform.finest.op.l2_error(uniform.Q)

    errs = []
    for tau_max in (1e-1, 1e-2, 1e-3, 1e-5):
        cfg = AdaptConfig(tau_max=tau_max, n_max=6)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            run = adaptation.run_single_stage(msh, law, 4, cfg,
                                              final_tol=1e-10)
        errs.append(DGOperator(msh, law, run.orders).l2_error(run.Q))
    monotone = all(b <= a * (1 + 1e-9) for a, b in zip(errs, errs[1:]))
    plateau = errs[-1] / err_u
    ok = monotone and plateau <= 2.0
    _verdict(8, "threshold sweep error plateau", ok,
             f"errors {['%.2e' % e for e in errs]} non-increasing, "
             f"plateau {plateau:.2f}x uniform (<=2x)")


# -- 9 ---------------------------------------------------------------------------


def test_09_multi_stage_work_and_dof_benefit():
    msh = mesh.build_cartesian(3, 3)
    law = physics.make_case("advdiff-boundary-layer", mu=0.005, delta=0.1)
    base = dict(tau_max=1e-6, n_max=10, jump_rule="strict-one")
    runs = {}
    for stages in ((4,), (4, 8)):
        cfg = AdaptConfig(stages=stages, **base)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            runs[stages] = adaptation.run_multi_stage(msh, law, cfg,
                                                      final_tol=1e-7)
    single, multi = runs[(4,)], runs[(4, 8)]
    wu_ratio = single.work_units / multi.work_units
    dof_ratio = single.orders.dofs() / multi.orders.dofs()
    ok = wu_ratio >= 1.0 and dof_ratio >= 1.0
    _verdict(9, "multi-stage benefit", ok,
             f"work {wu_ratio:.2f}x (>=1.0), dof {dof_ratio:.2f}x (>=1.0), "
             f"{single.orders.dofs()} vs {multi.orders.dofs()} DOF")


# -- 10 --------------------------------------------------------------------------


RERUN_INI = """
[run]
name = rerun
case = advdiff-sine
mode = fas+adapt
order = 2
tolerance = 1e-7

[mesh]
nx = 2
ny = 2

[adapt]
tau_max = 1e-1
n_max = 4
"""


def test_10_determinism_and_idempotence(tmp_path):
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    cfg = AdaptConfig(tau_max=1e-2, n_max=5)
    outs = []
    for _ in range(2):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            outs.append(adaptation.run_single_stage(msh, law, 3, cfg,
                                                    final_tol=1e-8))
    same_orders = outs[0].orders.orders.tolist() == outs[1].orders.orders.tolist()
    same_maps = outs[0].maps[0].to_json() == outs[1].maps[0].to_json()

    summaries = []
    for sub in ("a", "b"):
        ini = tmp_path / f"{sub}.ini"
        ini.write_text(RERUN_INI.replace(
            "[mesh]", f"output = {tmp_path / sub}\n\n[mesh]"))
        assert cli.main(["run", str(ini)]) == 0
        summaries.append((tmp_path / sub / "rerun" / "summary.json").read_bytes())
    same_summary = summaries[0] == summaries[1]

    rng = np.random.default_rng(5)
    idem = True
    for rule in adaptation.JUMP_RULES:
        f0 = OrderField(rng.integers(1, 9, size=(msh.num_elements, 2)))
        lj = limit_jumps(msh, f0, rule)
        idem &= lj.same_orders(limit_jumps(msh, lj, rule))
        cp = conforming_pass(msh, f0, ("south", "north"), rule)
        idem &= cp.same_orders(conforming_pass(msh, cp, ("south", "north"),
                                               rule))
    ok = same_orders and same_maps and same_summary and idem
    _verdict(10, "determinism / idempotence", ok,
             f"orders {same_orders}, maps {same_maps}, "
             f"summary bytes {same_summary}, idempotent {idem}")
