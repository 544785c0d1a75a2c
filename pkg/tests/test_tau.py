"""Truncation-error estimation: directional maps, extrapolation, oracles."""

import json
import warnings

import numpy as np
import pytest

from taudg import fields, mesh, multigrid, physics, tau
from taudg.errors import EstimationError
from taudg.fields import OrderField
from taudg.operators import DGOperator


def _converged(case, order, nel=2, tol=1e-9, **params):
    msh = mesh.build_cartesian(nel, nel)
    law = physics.make_case(case, **params)
    orders = OrderField.uniform(msh.num_elements, order)
    op = DGOperator(msh, law, orders)
    solver = multigrid.FASSolver(msh, law, orders, fine_op=op)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        solver.converge(tol, max_cycles=300)
    return msh, law, op, solver.Q.copy()


@pytest.fixture(scope="module")
def sine4():
    return _converged("advdiff-sine", 4)


def _bruteforce(msh, law, Q, n1, n2, isolated):
    # restrict in both directions at once, evaluate the coarse operator once
    of = OrderField.uniform(msh.num_elements, n1, n2)
    opc = DGOperator(msh, law, of)
    return opc.truncation(fields.transfer(Q, of), isolated=isolated)


def _synthetic_map(p=4, entries=((2, 1e-2), (3, 1e-3))):
    orders = OrderField.uniform(1, p)
    tm = tau.TauMap(orders, tau.EstimationContext(1e-3, 0.0, True))
    for n, v in entries:
        tm.record(0, 1, n, v)
        tm.record(0, 2, n, v)
    return tm


# --- sum map -----------------------------------------------------------------


def test_sum_map_of_directional_arrays():
    m = tau.combine_directional([4.0, 2.0], [6.0, 1.0])
    assert m[(0, 0)] == 10.0
    assert m[(1, 1)] == 3.0
    assert m[(0, 1)] == 5.0
    assert m[(1, 0)] == 8.0


def test_sum_map_symmetric_for_equal_directions():
    m = tau.combine_directional({1: 0.5, 2: 0.25}, {1: 0.5, 2: 0.25})
    for (n1, n2), v in m.items():
        assert v == m[(n2, n1)]


def test_inner_entry_bounds_both_parts(sine4):
    # sums of nonnegative parts dominate each part
    msh, law, op, Q = sine4
    tm = tau.estimate(msh, law, Q, 1e-6, fine_op=op)
    for e in range(tm.num_elements):
        inner = tm.inner_map(e)
        assert inner, "inner map should not be empty"
        for (n1, n2), v in inner.items():
            t1 = tm.tau[e][0][n1]
            t2 = tm.tau[e][1][n2]
            assert v >= max(t1, t2)
            assert v == t1 + t2
            assert v >= 0.0


# --- estimation mechanics ----------------------------------------------------


def test_refuses_unconverged_state(sine4):
    msh, law, op, Q = sine4
    rough = op.project_function(law.exact)  # residual ~1e-2, far from 1e-9
    with pytest.raises(EstimationError, match="insufficient convergence"):
        tau.estimate(msh, law, rough, 1e-6, fine_op=op)


def test_negative_value_rejected():
    tm = _synthetic_map()
    with pytest.raises(EstimationError, match="negative"):
        tm.record(0, 1, 2, -1.0)


def test_estimates_match_direct_restriction(sine4):
    # descent recordings equal one-shot L2 restriction + evaluation
    msh, law, op, Q = sine4
    tm = tau.estimate(msh, law, Q, 1e-6, isolated=True, fine_op=op)
    for d, n in ((1, 1), (1, 2), (2, 3)):
        o = (n, 4) if d == 1 else (4, n)
        of = OrderField.uniform(msh.num_elements, o[0], o[1])
        opc = DGOperator(msh, law, of)
        direct = opc.truncation(fields.transfer(Q, of), isolated=True)
        for e in range(msh.num_elements):
            got = tm.tau[e][d - 1][n]
            assert abs(got - direct[e]) <= 1e-12 * max(1.0, direct[e])


def test_directional_estimates_against_exact_oracle():
    # quasi estimates track the injected-exact oracle where the value is
    # large enough to matter (above the threshold the run converged for)
    tau_max = 1e-4
    msh, law, op, Q = _converged("advdiff-sine", 6, tol=tau_max / 10)
    tm = tau.estimate(msh, law, Q, tau_max, isolated=True, fine_op=op)
    checked = 0
    for d in (1, 2):
        for n in range(1, 6):
            o = (n, 6) if d == 1 else (6, n)
            _, oracle = tau.exact_tau_oracle(
                msh, law, OrderField.uniform(msh.num_elements, o[0], o[1])
            )
            for e in range(msh.num_elements):
                if oracle[e] > tau_max:
                    checked += 1
                    rel = abs(tm.tau[e][d - 1][n] - oracle[e]) / oracle[e]
                    assert rel <= 0.2, (d, n, e, rel)
    assert checked >= 20


def test_inner_map_tracks_coupled_bruteforce(sine4):
    # assembled sums vs restrict-both-evaluate-once, away from the order-1
    # edge where the cross term of the decomposition is not yet small
    msh, law, op, Q = sine4
    tm = tau.estimate(msh, law, Q, 1e-6, isolated=True, fine_op=op)
    for n1 in range(2, 4):
        for n2 in range(2, 4):
            bf = _bruteforce(msh, law, Q, n1, n2, isolated=True)
            for e in range(msh.num_elements):
                ratio = tm.combined(e, n1, n2) / bf[e]
                assert 0.5 <= ratio <= 2.0, (n1, n2, e, ratio)


def test_estimation_is_idempotent(sine4):
    msh, law, op, Q = sine4
    a = tau.estimate(msh, law, Q, 1e-6, fine_op=op)
    b = tau.estimate(msh, law, Q, 1e-6, fine_op=op)
    assert a.to_json() == b.to_json()


def test_estimation_leaves_state_untouched(sine4):
    msh, law, op, Q = sine4
    before = Q.copy()
    tau.estimate(msh, law, Q, 1e-6, fine_op=op)
    for e in range(msh.num_elements):
        assert np.array_equal(Q.element(e), before.element(e))


def test_anisotropic_reference_orders():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    arr = np.array([[4, 3], [3, 4], [4, 4], [3, 3]])
    orders = OrderField(arr)
    op = DGOperator(msh, law, orders)
    solver = multigrid.FASSolver(msh, law, orders, fine_op=op)
    solver.converge(1e-8, max_cycles=300)
    tm = tau.estimate(msh, law, solver.Q, 1e-6, fine_op=op)
    for e in range(4):
        p1, p2 = arr[e]
        assert sorted(tm.tau[e][0]) == list(range(1, p1))
        assert sorted(tm.tau[e][1]) == list(range(1, p2))
        for d in (0, 1):
            assert all(v >= 0.0 for v in tm.tau[e][d].values())


# --- isolated locality -------------------------------------------------------


def test_isolated_estimates_ignore_other_elements():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    orders = OrderField.uniform(msh.num_elements, 4)
    op = DGOperator(msh, law, orders)
    Q = op.project_function(law.exact)
    base = tau.estimate(msh, law, Q, 1e6, isolated=True, fine_op=op)
    poked = Q.copy()
    g, row = orders.element_slot[3]
    poked.blocks[g][row] += 0.37
    other = tau.estimate(msh, law, poked, 1e6, isolated=True, fine_op=op)
    for e in (0, 1, 2):
        for d in (0, 1):
            for n in (1, 2, 3):
                a, b = base.tau[e][d][n], other.tau[e][d][n]
                assert abs(a - b) <= 1e-13 * max(1.0, a)
    # the non-isolated variant does see the neighbor through face fluxes
    non_a = tau.estimate(msh, law, Q, 1e6, isolated=False, fine_op=op)
    non_b = tau.estimate(msh, law, poked, 1e6, isolated=False, fine_op=op)
    assert abs(non_a.tau[1][0][2] - non_b.tau[1][0][2]) > 1e-8


def test_isolated_estimates_ignore_neighbor_orders():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    uniform = OrderField.uniform(msh.num_elements, 4)
    arr = uniform.orders.copy()
    arr[3] = (3, 3)
    mixed = OrderField(arr)
    maps = []
    for orders in (uniform, mixed):
        op = DGOperator(msh, law, orders)
        Q = op.project_function(law.exact)
        maps.append(tau.estimate(msh, law, Q, 1e6, isolated=True, fine_op=op))
    for e in (0, 1, 2):
        for d in (0, 1):
            for n in (1, 2, 3):
                a, b = maps[0].tau[e][d][n], maps[1].tau[e][d][n]
                assert abs(a - b) <= 1e-13 * max(1.0, a)


# --- cost contract -----------------------------------------------------------


def _level_calls(solver, key):
    return sum(lev.op.calls[key] for lev in solver.levels)


def test_estimation_cost_contract():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    orders = OrderField.uniform(msh.num_elements, 5)
    op = DGOperator(msh, law, orders)
    base_solver = multigrid.FASSolver(msh, law, orders, fine_op=op)
    base_solver.converge(1e-8, max_cycles=300)
    Q = base_solver.Q

    def build():
        s = multigrid.FASSolver(msh, law, orders, direction=1,
                                fine_op=DGOperator(msh, law, orders))
        s.set_state(Q)
        return s

    plain = build()
    plain.estimation_descent()
    tmap = tau.TauMap(orders, tau.EstimationContext(1e-7, 0.0, False))
    recording = build()
    recording.estimation_descent(tau.recorder_for(tmap, 1))
    # non-isolated recording is free: counts identical to the plain descent
    assert _level_calls(recording, "apply") == _level_calls(plain, "apply")
    assert _level_calls(recording, "apply_isolated") == 0

    tmap_iso = tau.TauMap(orders, tau.EstimationContext(1e-7, 0.0, True))
    iso = build()
    iso.estimation_descent(tau.recorder_for(tmap_iso, 1))
    # the decoupled variant re-evaluates once per coarse level, nothing more
    assert _level_calls(iso, "apply") == _level_calls(plain, "apply")
    assert _level_calls(iso, "apply_isolated") == len(iso.levels) - 1


def test_recorder_is_free_inside_solver_cycles():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    orders = OrderField.uniform(msh.num_elements, 3)

    def run(recorder):
        solver = multigrid.FASSolver(msh, law, orders,
                                     fine_op=DGOperator(msh, law, orders))
        solver.v_cycle(recorder=recorder)
        return _level_calls(solver, "apply")

    tmap = tau.TauMap(orders, tau.EstimationContext(1e-7, 0.0, False))
    assert run(tau.recorder_for(tmap, 1)) == run(None)
    assert len(tmap.tau[0][0]) == 2  # orders 1 and 2 seen on the way down


# --- extrapolation -----------------------------------------------------------


def test_geometric_sequence_extrapolates_exactly():
    tm = _synthetic_map(p=4, entries=((2, 1e-2), (3, 1e-3)))
    tau.extrapolate_map(tm, 5)
    for d in (0, 1):
        assert tm.tau[0][d][4] == pytest.approx(1e-4, rel=1e-12)
        assert tm.tau[0][d][5] == pytest.approx(1e-5, rel=1e-12)
        assert tm.extrapolated[0][d] == {4, 5}
        assert not tm.non_spectral[0][d]
        assert tm.fits[0][d].slope == pytest.approx(-1.0, abs=1e-12)
    assert tm.is_extrapolated(0, 4, 2)
    assert not tm.is_extrapolated(0, 2, 3)
    assert tm.combined(0, 4, 4) == pytest.approx(2e-4, rel=1e-12)


def test_constant_sequence_marked_non_spectral():
    tm = _synthetic_map(p=4, entries=((2, 1e-3), (3, 1e-3)))
    tau.extrapolate_map(tm, 6)
    for d in (0, 1):
        assert tm.non_spectral[0][d]
        assert all(np.isinf(tm.tau[0][d][n]) for n in (4, 5, 6))
    assert np.isinf(tm.combined(0, 5, 5))


def test_too_few_positive_entries_marked_non_spectral():
    tm = _synthetic_map(p=4, entries=((2, 0.0), (3, 1e-3)))
    tau.extrapolate_map(tm, 5)
    assert tm.non_spectral[0][0]
    assert np.isinf(tm.tau[0][0][4])


def test_growing_sequence_marked_non_spectral():
    tm = _synthetic_map(p=4, entries=((2, 1e-3), (3, 1e-2)))
    tau.extrapolate_map(tm, 5)
    assert tm.non_spectral[0][0]


def test_extrapolation_beyond_reference_tracks_oracle():
    # two orders past the reference on a case whose demand sits in one
    # direction: the log-linear fit must land within a factor of two
    msh, law, op, Q = _converged("advdiff-aniso", 6)
    tm = tau.estimate(msh, law, Q, 1e-6, isolated=True, fine_op=op)
    tau.extrapolate_map(tm, 8)
    _, oracle = tau.exact_tau_oracle(
        msh, law, OrderField.uniform(msh.num_elements, 8, 6)
    )
    for e in range(msh.num_elements):
        ratio = tm.tau[e][0][8] / oracle[e]
        assert 0.5 <= ratio <= 2.0, (e, ratio)


# --- exact oracle ------------------------------------------------------------


def test_oracle_vanishes_in_quadrature_exact_regime():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-poly")
    coupled, decoupled = tau.exact_tau_oracle(
        msh, law, OrderField.uniform(msh.num_elements, 2)
    )
    assert np.max(coupled) <= 1e-11
    assert np.max(decoupled) <= 1e-11


def test_oracle_decays_spectrally_on_smooth_case():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    vals = []
    for n in range(2, 7):
        _, iso = tau.exact_tau_oracle(
            msh, law, OrderField.uniform(msh.num_elements, n)
        )
        vals.append(iso[0])
    ns = np.arange(2, 7)
    coeffs = np.polyfit(ns, np.log10(vals), 1)
    rms = float(np.sqrt(np.mean((np.polyval(coeffs, ns) - np.log10(vals)) ** 2)))
    assert coeffs[0] < -0.3
    assert rms < 0.3


def test_oracle_isolated_ignores_neighbor_orders():
    msh = mesh.build_cartesian(2, 2)
    law = physics.make_case("advdiff-sine")
    uniform = OrderField.uniform(msh.num_elements, 4)
    arr = uniform.orders.copy()
    arr[3] = (2, 5)
    _, iso_a = tau.exact_tau_oracle(msh, law, uniform)
    coupled_a, _ = tau.exact_tau_oracle(msh, law, uniform)
    coupled_b, iso_b = tau.exact_tau_oracle(msh, law, OrderField(arr))
    for e in (0, 1, 2):
        assert abs(iso_a[e] - iso_b[e]) <= 1e-13 * max(1.0, iso_a[e])
    # the coupled variant is allowed to (and does) react at the shared faces
    assert abs(coupled_a[1] - coupled_b[1]) > 1e-10


# --- serialization -----------------------------------------------------------


def test_map_serialization_roundtrips(sine4):
    msh, law, op, Q = sine4
    tm = tau.estimate(msh, law, Q, 1e-6, fine_op=op)
    tau.extrapolate_map(tm, 6)
    data = json.loads(tm.to_json())
    assert data["isolated"] is True
    assert data["norm"] == "elementwise-inf"
    assert len(data["elements"]) == tm.num_elements
    entry = data["elements"][0]
    assert entry["orders"] == [4, 4]
    measured = dict(tuple(p) for p in entry["dir1"]["measured"])
    assert set(measured) == {1, 2, 3}
    assert measured[2] == tm.tau[0][0][2]
    extrapolated = dict(tuple(p) for p in entry["dir1"]["extrapolated"])
    assert set(extrapolated) == {4, 5, 6}
    assert entry["dir1"]["fit"]["slope"] == tm.fits[0][0].slope


def test_non_spectral_map_serializes_infinities():
    tm = _synthetic_map(p=4, entries=((2, 1e-3), (3, 1e-3)))
    tau.extrapolate_map(tm, 5)
    data = json.loads(tm.to_json())
    vals = dict(tuple(p) for p in data["elements"][0]["dir1"]["extrapolated"])
    assert vals[4] == float("inf")
