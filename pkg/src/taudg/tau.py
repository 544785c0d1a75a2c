"""Truncation-error estimation from partially converged solutions.

The estimate for a coarse order pair is tau = M (S - A(I Q)), the discrete
operator applied to the fine solution's L2 restriction, recorded as one
inf-norm per element.  Estimates are gathered during two anisotropic
multigrid descents (one per reference direction): at every coarse-level
entry the descent has just evaluated A(restricted Q) to form its
full-approximation source, so the non-isolated estimate costs no extra
operator calls; the isolated variant re-evaluates the surface terms from
element-interior traces only (one extra decoupled operator call per level).
The same recorder attaches to production V-cycles, but ``estimate`` uses
smoothing-free descents: the recorded values are then pure functions of the
snapshot, element-local for the isolated variant, and bit-reproducible.

Directional values combine by addition into the inner map, and a linear fit
of log10(tau) against order extends each direction beyond the reference
order.  Directions whose fit does not decay (or with fewer than two positive
samples) are flagged non-spectral: their extrapolated entries are +inf so
that order selection falls through to its bound fallback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import multigrid
from .errors import EstimationError
from .fields import NodalField, OrderField
from .operators import DGOperator


@dataclass(frozen=True)
class DirectionalFit:
    slope: float
    intercept: float
    residual: float

    def value(self, n: int) -> float:
        return 10.0 ** (self.intercept + self.slope * n)


@dataclass(frozen=True)
class EstimationContext:
    threshold: float          # residual bound the fine solution had to meet
    residual_norm: float      # actual fine residual at estimation time
    isolated: bool


class TauMap:
    """Per-element directional truncation-error values and their sum map.

    Directional entries live in ``tau[e][d]`` as order -> value dicts
    (d = 0, 1 for the two reference directions); measured and extrapolated
    orders are tracked separately.  The combined estimate for an order pair
    is the sum of the two directional entries.
    """

    def __init__(self, fine_orders: OrderField, context: EstimationContext):
        self.fine_orders = fine_orders
        self.context = context
        n = fine_orders.num_elements
        self.tau = [[{}, {}] for _ in range(n)]
        self.extrapolated = [[set(), set()] for _ in range(n)]
        self.fits: list[list[DirectionalFit | None]] = [[None, None] for _ in range(n)]
        self.non_spectral = [[False, False] for _ in range(n)]
        self.n_max = fine_orders.max_order()
        self.work_units = 0.0  # filled by the estimator; not serialized

    @property
    def num_elements(self) -> int:
        return self.fine_orders.num_elements

    def record(self, e: int, direction: int, order: int, value: float) -> None:
        if value < 0.0:
            raise EstimationError("truncation-error norms cannot be negative")
        self.tau[e][direction - 1][int(order)] = float(value)

    def directional(self, e: int, direction: int) -> dict[int, float]:
        return dict(self.tau[e][direction - 1])

    def measured_orders(self, e: int, direction: int) -> list[int]:
        d = direction - 1
        return sorted(n for n in self.tau[e][d] if n not in self.extrapolated[e][d])

    def combined(self, e: int, n1: int, n2: int) -> float | None:
        """Sum estimate for the order pair, or None where a part is missing."""
        t1 = self.tau[e][0].get(n1)
        t2 = self.tau[e][1].get(n2)
        if t1 is None or t2 is None:
            return None
        return t1 + t2

    def is_extrapolated(self, e: int, n1: int, n2: int) -> bool:
        return n1 in self.extrapolated[e][0] or n2 in self.extrapolated[e][1]

    def inner_map(self, e: int) -> dict[tuple[int, int], float]:
        """All measured order-pair sums below the element's reference order."""
        p1, p2 = self.fine_orders.orders[e]
        out = {}
        for n1 in self.measured_orders(e, 1):
            if n1 >= p1:
                continue
            for n2 in self.measured_orders(e, 2):
                if n2 >= p2:
                    continue
                out[(n1, n2)] = self.tau[e][0][n1] + self.tau[e][1][n2]
        return out

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        elements = []
        for e in range(self.num_elements):
            entry = {
                "element": e,
                "orders": [int(x) for x in self.fine_orders.orders[e]],
            }
            for d in (0, 1):
                fit = self.fits[e][d]
                entry[f"dir{d + 1}"] = {
                    "measured": [[n, self.tau[e][d][n]]
                                 for n in self.measured_orders(e, d + 1)],
                    "extrapolated": [[n, self.tau[e][d][n]]
                                     for n in sorted(self.extrapolated[e][d])],
                    "fit": None if fit is None else {
                        "slope": fit.slope,
                        "intercept": fit.intercept,
                        "residual": fit.residual,
                    },
                    "non_spectral": self.non_spectral[e][d],
                }
            elements.append(entry)
        return {
            "isolated": self.context.isolated,
            "threshold": self.context.threshold,
            "residual_norm": self.context.residual_norm,
            "norm": "elementwise-inf",
            "n_max": self.n_max,
            "elements": elements,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def combine_directional(tau1, tau2) -> dict[tuple[int, int], float]:
    """Sum map over all pairs of directional entries.

    Accepts order -> value dicts or plain sequences (indexed from order 0).
    """
    if not isinstance(tau1, dict):
        tau1 = dict(enumerate(tau1))
    if not isinstance(tau2, dict):
        tau2 = dict(enumerate(tau2))
    return {(n1, n2): v1 + v2 for n1, v1 in tau1.items() for n2, v2 in tau2.items()}


def recorder_for(tmap: TauMap, direction: int):
    """Coarse-entry hook recording direction-``direction`` estimates into
    ``tmap``; attachable to any descent that coarsens only that direction.

    Records one value per element and visited coarse order, skipping elements
    whose order in the estimated direction did not drop below its reference.
    The non-isolated estimate reuses the operator value the descent already
    computed for its coarse source; the isolated one re-evaluates with
    element-local traces (one extra decoupled operator call per level).
    """
    fine_arr = tmap.fine_orders.orders

    def recorder(solver, li, a_val):
        lev = solver.levels[li]
        if tmap.context.isolated:
            a_val = lev.op.m_inv_apply(lev.Q, isolated=True)
            solver._account(li, 1)
        values = lev.op.truncation_from_avalue(a_val)
        lev_arr = lev.orders.orders
        d = direction - 1
        for e in range(len(values)):
            if lev_arr[e, d] < fine_arr[e, d]:
                tmap.record(e, direction, lev_arr[e, d], values[e])

    return recorder


def estimate(
    msh,
    law,
    Q: NodalField,
    tau_max: float,
    isolated: bool = True,
    fine_op: DGOperator | None = None,
) -> TauMap:
    """Directional estimates from one smoothing-free descent per direction.

    ``Q`` must be converged to an inf-norm residual of tau_max/10 or better;
    the descents run on a copy, so the caller's state is untouched and
    repeated calls give bit-identical maps.
    """
    orders = Q.field
    op = fine_op or DGOperator(msh, law, orders)
    rnorm = op.residual_norm(Q)
    threshold = tau_max / 10.0
    if rnorm > threshold:
        raise EstimationError(
            f"insufficient convergence for estimation: |r|={rnorm:.3e} "
            f"exceeds tau_max/10={threshold:.3e}"
        )
    tmap = TauMap(orders, EstimationContext(threshold, rnorm, isolated))
    tmap.work_units = 1.0 / 3.0  # the convergence check above

    for direction in (1, 2):
        if orders.max_order_dir(direction) <= multigrid.N_COARSE:
            continue  # nothing to coarsen in this direction
        solver = multigrid.FASSolver(
            msh, law, orders, rule="high-order", direction=direction,
            fine_op=op,
        )
        solver.set_state(Q)
        solver.estimation_descent(recorder_for(tmap, direction))
        tmap.work_units += solver.work_units
    return tmap


def extrapolate_map(tmap: TauMap, n_max: int) -> TauMap:
    """Extend each direction beyond the reference order by a log-linear fit.

    Fits log10(tau) against order over all measured entries with tau > 0;
    extrapolated orders run from the element's reference order up to
    ``n_max``.  A non-decaying fit or fewer than two positive samples marks
    the direction non-spectral and fills the extension with +inf.
    """
    if n_max < 1:
        raise EstimationError("n_max must be at least 1")
    tmap.n_max = max(tmap.n_max, n_max)
    for e in range(tmap.num_elements):
        for d in (0, 1):
            p = int(tmap.fine_orders.orders[e, d])
            points = [(n, v) for n, v in tmap.tau[e][d].items()
                      if n not in tmap.extrapolated[e][d] and v > 0.0]
            spectral_fit = None
            if len(points) >= 2:
                ns = np.array([n for n, _ in points], dtype=float)
                logs = np.log10([v for _, v in points])
                (slope, intercept), res = _lsq_line(ns, logs)
                spectral_fit = DirectionalFit(slope, intercept, res)
                tmap.fits[e][d] = spectral_fit
            # tolerance absorbs fit noise on exactly-constant sequences
            if spectral_fit is None or spectral_fit.slope >= -1e-12:
                tmap.non_spectral[e][d] = True
                fill = float("inf")
                for n in range(p, n_max + 1):
                    tmap.tau[e][d][n] = fill
                    tmap.extrapolated[e][d].add(n)
            else:
                for n in range(p, n_max + 1):
                    tmap.tau[e][d][n] = spectral_fit.value(n)
                    tmap.extrapolated[e][d].add(n)
    return tmap


def _lsq_line(x: np.ndarray, y: np.ndarray) -> tuple[tuple[float, float], float]:
    coeffs = np.polyfit(x, y, 1)
    fitted = np.polyval(coeffs, x)
    res = float(np.sqrt(np.mean((fitted - y) ** 2)))
    return (float(coeffs[0]), float(coeffs[1])), res


def exact_tau_oracle(msh, law, orders: OrderField) -> tuple[np.ndarray, np.ndarray]:
    """Per-element norms of M (S - A(I qbar)) with the exact field injected.

    Returns the (coupled, decoupled-surface) pair; the decoupled variant
    depends only on each element's own order and geometry.
    """
    op = DGOperator(msh, law, orders)
    qbar = op.project_function(law.exact)
    return op.truncation(qbar, isolated=False), op.truncation(qbar, isolated=True)
