"""Nonlinear FAS p-multigrid: order hierarchies, V-cycle, FMG driver.

Coarse "grids" are lower polynomial orders on the same mesh.  Each level owns
a spatial operator plus solution/source slots; transfers are batched
per-group L2 projections (restriction; exact embedding when prolongating).
Every level solves A(Q) = S with the RK3 smoother: the finest S is the PDE
source, coarse levels receive the full-approximation source
S = A(restrict Q) + restrict(S_fine - A_fine(Q)) so that the coarse problem
reproduces the fine solution's restriction at convergence.

Level lists are ordered coarsest first; "level k" in logs and errors is the
1-based position, so level 1 is the coarsest.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import spectral, timestep
from .errors import ConfigError, DivergedError, StallError
from .fields import NodalField, OrderField
from .operators import DGOperator

# fixed coarsening parameters: one order per level, down to order one
N_COARSE = 1
DELTA_N = 1


@dataclass(frozen=True)
class SmootherConfig:
    """Batch sizes and stopping rules for the per-level RK3 smoothing.

    Pre-smoothing runs in batches of ``pre_sweeps`` until the residual's
    inf-norm is within a factor ``eta`` of its restriction to the next
    coarser level; post-smoothing runs in batches of ``post_sweeps`` until
    the residual is back at or below its value when pre-smoothing stopped.
    The coarsest level always runs exactly ``coarsest_sweeps`` sweeps.
    """

    pre_sweeps: int = 100
    post_sweeps: int = 100
    eta: float = 1.1
    coarsest_sweeps: int = 400
    max_batches: int = 20

    def __post_init__(self):
        if min(self.pre_sweeps, self.post_sweeps, self.coarsest_sweeps) <= 0:
            raise ConfigError("smoothing sweep counts must be positive")
        if self.max_batches <= 0:
            raise ConfigError("max_batches must be positive")
        if self.eta < 1.0:
            raise ConfigError("eta below 1 would demand a sharper-than-fine "
                              "coarse residual; use eta >= 1")


def level_order_fields(
    orders: OrderField, rule: str, direction: int | None = None
) -> list[OrderField]:
    """Per-level order fields, coarsest first; the last entry equals ``orders``.

    ``direction`` selects anisotropic coarsening (only that reference
    direction is reduced); None coarsens both directions together from the
    global maximum.  ``rule`` is "uniform" (every element drops DELTA_N per
    level, clamped at N_COARSE) or "high-order" (per-level cap; only elements
    above the cap are coarsened).
    """
    if rule not in ("uniform", "high-order"):
        raise ConfigError(f"unknown coarsening rule {rule!r}")
    if direction not in (None, 1, 2):
        raise ConfigError(f"coarsening direction must be 1 or 2, got {direction}")
    arr = orders.orders
    if arr.min() < N_COARSE:
        raise ConfigError(
            f"orders below {N_COARSE} cannot enter the multigrid hierarchy"
        )
    if direction is None:
        dirs = (0, 1)
        n_mg = (orders.max_order() - N_COARSE) // DELTA_N + 1
    else:
        dirs = (direction - 1,)
        n_mg = (orders.max_order_dir(direction) - N_COARSE) // DELTA_N + 1

    fields = []
    for lev in range(1, n_mg + 1):
        lev_arr = arr.copy()
        drop = DELTA_N * (n_mg - lev)
        for d in dirs:
            if rule == "uniform":
                lev_arr[:, d] = np.maximum(arr[:, d] - drop, N_COARSE)
            else:
                cap = int(arr[:, dirs].max()) - drop
                lev_arr[:, d] = np.minimum(arr[:, d], cap)
        fields.append(OrderField(lev_arr))
    return fields


class OrderTransfer:
    """Batched nodal-field transfer between a fine and a coarse order field.

    Valid whenever every element's coarse signature is a function of its fine
    signature (true for all multigrid level pairs); restriction is the L2
    projection per direction, prolongation the corresponding embedding.
    """

    def __init__(self, fine: OrderField, coarse: OrderField):
        if fine.num_elements != coarse.num_elements:
            raise ConfigError("order fields cover different element counts")
        self.fine = fine
        self.coarse = coarse
        self._plan = []
        for g, ((f1, f2), ids) in enumerate(
            zip(fine.group_orders, fine.group_elements)
        ):
            slots = coarse.element_slot[ids]
            cg = int(slots[0, 0])
            if not np.all(slots[:, 0] == cg):
                raise ConfigError("coarse orders are not a function of fine orders")
            c1, c2 = coarse.group_orders[cg]
            self._plan.append((
                g, cg, slots[:, 1],
                spectral.l2_projection(f1, c1), spectral.l2_projection(f2, c2),
                spectral.l2_projection(c1, f1), spectral.l2_projection(c2, f2),
            ))

    def restrict(self, src: NodalField) -> NodalField:
        out = NodalField.zeros(self.coarse)
        for g, cg, rows, d1, d2, _, _ in self._plan:
            out.blocks[cg][rows] = np.einsum("ai,bj,rij->rab", d1, d2, src.blocks[g])
        return out

    def prolong(self, src: NodalField) -> NodalField:
        out = NodalField.zeros(self.fine)
        for g, cg, rows, _, _, u1, u2 in self._plan:
            out.blocks[g] = np.einsum("ia,jb,rab->rij", u1, u2, src.blocks[cg][rows])
        return out

    def prolong_add(self, src: NodalField, out: NodalField) -> None:
        for g, cg, rows, _, _, u1, u2 in self._plan:
            out.blocks[g] += np.einsum("ia,jb,rab->rij", u1, u2, src.blocks[cg][rows])


class Level:
    """One multigrid level: operator plus solution/source storage slots."""

    def __init__(self, op: DGOperator, down: OrderTransfer | None):
        self.op = op
        self.orders = op.orders
        self.down = down              # transfer to the next coarser level
        self.dofs = op.orders.dofs()
        self.Q: NodalField | None = None
        self.Q0: NodalField | None = None
        self.S: NodalField | None = None


class FASSolver:
    """Full-approximation-scheme driver over one order hierarchy.

    ``recorder(solver, level_index, a_value)``, when passed to the cycle
    methods, is invoked at every coarse-level entry right after the
    full-approximation source is formed; ``a_value`` is the freshly computed
    A(restricted Q) on that level.  Used by the truncation-error estimator.
    """

    def __init__(
        self,
        msh,
        law,
        orders: OrderField,
        smoother: SmootherConfig | None = None,
        time_config: timestep.TimeConfig | None = None,
        rule: str = "high-order",
        direction: int | None = None,
        fine_op: DGOperator | None = None,
    ):
        self.smoother = smoother or SmootherConfig()
        self.time_config = time_config or timestep.TimeConfig()
        fields = level_order_fields(orders, rule, direction)
        self.levels: list[Level] = []
        for k, of in enumerate(fields):
            if k == len(fields) - 1 and fine_op is not None:
                op = fine_op
                if not fine_op.orders.same_orders(of):
                    raise ConfigError("fine operator does not match the hierarchy")
            else:
                op = DGOperator(msh, law, of)
            self.levels.append(Level(op, None))
        for k in range(1, len(self.levels)):
            self.levels[k].down = OrderTransfer(fields[k], fields[k - 1])
        finest = self.levels[-1]
        finest.Q = NodalField.zeros(finest.orders)
        finest.S = finest.op.source
        self.log: list[dict] = []
        self.cycle = 0
        self._evals = 0.0
        self._t0 = time.perf_counter()

    # state access ------------------------------------------------------------

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    @property
    def Q(self) -> NodalField:
        return self.finest.Q

    def set_state(self, Q: NodalField) -> None:
        if not Q.field.same_orders(self.finest.orders):
            raise ConfigError("state does not match the finest level's orders")
        # rebind onto this hierarchy's own field: equal-valued order fields
        # share the group layout, so the blocks carry over verbatim
        self.finest.Q = NodalField(self.finest.orders,
                                   [b.copy() for b in Q.blocks])

    @property
    def work_units(self) -> float:
        """Operator evaluations in units of one finest-level RK3 sweep."""
        return self._evals / 3.0

    def _account(self, li: int, evals: float) -> None:
        self._evals += evals * self.levels[li].dofs / self.finest.dofs

    def _log(self, li: int, phase: str, sweeps: int, rnorm: float, note: str = ""):
        self.log.append({
            "cycle": self.cycle,
            "level": li + 1,
            "phase": phase,
            "sweeps": sweeps,
            "rnorm": rnorm,
            "work_units": self.work_units,
            "wall": time.perf_counter() - self._t0,
            "note": note,
        })

    # smoothing ---------------------------------------------------------------

    def _smooth(self, li: int, sweeps: int) -> None:
        lev = self.levels[li]
        try:
            timestep.smooth(lev.op, lev.Q, sweeps, self.time_config, source=lev.S)
        except DivergedError as exc:
            raise DivergedError(f"level {li + 1}: {exc}") from exc
        self._account(li, 3 * sweeps)

    def _residual(self, li: int) -> NodalField:
        lev = self.levels[li]
        self._account(li, 1)
        return lev.op.residual(lev.Q, lev.S)

    def _smooth_tuned(self, li: int, phase: str, target: float | None,
                      floor: float):
        """Batched smoothing with the phase's stopping rule.

        PRE stops once the residual norm is within ``eta`` of its restriction
        to the next coarser level; POST stops at or below ``target`` (the
        norm recorded when pre-smoothing stopped).  Either phase also stops
        at ``floor``: smoothing below what the enclosing cycle asks for is
        pure waste, and near machine precision the eta criterion can become
        unreachable (the leftover residual has no coarse-space content).
        Returns the last residual field and its norm.
        """
        cfg = self.smoother
        lev = self.levels[li]
        batch = cfg.pre_sweeps if phase == "pre" else cfg.post_sweeps
        sweeps = 0
        for _ in range(cfg.max_batches):
            self._smooth(li, batch)
            sweeps += batch
            r = self._residual(li)
            rnorm = r.norm_inf()
            if rnorm <= floor:
                break
            if phase == "pre":
                coarse_norm = lev.down.restrict(r).norm_inf()
                if rnorm < cfg.eta * coarse_norm or coarse_norm == 0.0:
                    break
            else:
                if rnorm <= target:
                    break
        else:
            warnings.warn(
                f"level {li + 1} {phase}-smoothing hit the {cfg.max_batches}-batch "
                f"cap at |r|={rnorm:.3e}", RuntimeWarning, stacklevel=2,
            )
            self._log(li, phase, sweeps, rnorm, note="max-batches")
            return r, rnorm
        self._log(li, phase, sweeps, rnorm)
        return r, rnorm

    # the cycle -----------------------------------------------------------

    def _floor(self, li: int, tol: float | None) -> float:
        """Smoothing stop floor: a fraction of the cycle's target plus a
        machine-noise guard scaled by the level's source magnitude."""
        lev = self.levels[li]
        noise = 1e-13 * max(1.0, lev.S.norm_inf() if lev.S is not None else 1.0)
        return max(noise, 0.3 * tol if tol is not None else 0.0)

    def v_cycle(self, recorder=None, tol: float | None = None) -> float:
        """One V-cycle from the finest level; returns the final residual norm.

        ``tol`` is the enclosing driver's target; smoothing phases stop early
        once they are comfortably below it.
        """
        self.cycle += 1
        return self._descend(len(self.levels) - 1, recorder, tol)

    def _descend(self, li: int, recorder, tol: float | None = None) -> float:
        lev = self.levels[li]
        if li == 0:
            # coarsest: fixed sweep count, no tuning
            self._smooth(li, self.smoother.coarsest_sweeps)
            rnorm = self._residual(li).norm_inf()
            self._log(li, "coarse", self.smoother.coarsest_sweeps, rnorm)
            return rnorm

        floor = self._floor(li, tol)
        r, pre_norm = self._smooth_tuned(li, "pre", None, floor)
        coarse = self.levels[li - 1]
        coarse.Q = lev.down.restrict(lev.Q)
        coarse.Q0 = coarse.Q.copy()
        a_val = coarse.op.m_inv_apply(coarse.Q)
        self._account(li - 1, 1)
        coarse.S = a_val + lev.down.restrict(r)
        if recorder is not None:
            recorder(self, li - 1, a_val)

        self._descend(li - 1, recorder)

        correction = coarse.Q - coarse.Q0
        lev.down.prolong_add(correction, lev.Q)
        _, post_norm = self._smooth_tuned(li, "post", pre_norm, floor)
        return post_norm

    def estimation_descent(self, recorder=None) -> None:
        """Descend the whole hierarchy without smoothing, invoking ``recorder``
        at every coarse-level entry exactly as ``v_cycle`` does.

        A pure measurement pass: each level's state becomes the plain
        level-by-level restriction of the finest solution, no corrections are
        formed, and the finest state is left untouched.
        """
        for li in range(len(self.levels) - 1, 0, -1):
            lev = self.levels[li]
            coarse = self.levels[li - 1]
            r = self._residual(li)
            coarse.Q = lev.down.restrict(lev.Q)
            a_val = coarse.op.m_inv_apply(coarse.Q)
            self._account(li - 1, 1)
            coarse.S = a_val + lev.down.restrict(r)
            if recorder is not None:
                recorder(self, li - 1, a_val)

    # outer drivers ---------------------------------------------------------

    def _cycle_until(self, li: int, tol: float, max_cycles: int, recorder,
                     stall_window: int = 10, stall_factor: float = 0.99) -> float:
        """V-cycles rooted at level ``li`` until its residual meets ``tol``."""
        norms = [self._residual(li).norm_inf()]
        self._log(li, "enter", 0, norms[-1])
        while norms[-1] > tol:
            if len(norms) > max_cycles:
                raise StallError(
                    f"level {li + 1}: residual {norms[-1]:.3e} has not reached "
                    f"{tol:.3e} within {max_cycles} cycles"
                )
            self.cycle += 1
            norms.append(self._descend(li, recorder, tol))
            self._log(li, "cycle-end", 0, norms[-1])
            if (len(norms) > stall_window
                    and norms[-1] > stall_factor * norms[-1 - stall_window]):
                raise StallError(
                    f"level {li + 1}: residual stalled near {norms[-1]:.3e} "
                    f"(no {stall_factor} decrease over {stall_window} cycles; "
                    f"recent: {['%.3e' % n for n in norms[-3:]]})"
                )
        return norms[-1]

    def converge(self, tol: float, max_cycles: int = 1000, recorder=None) -> float:
        """V-cycles on the full hierarchy until the finest residual meets tol."""
        return self._cycle_until(len(self.levels) - 1, tol, max_cycles, recorder)

    def solve_fmg(
        self,
        final_tol: float,
        level_tol: float = 1e-1,
        max_cycles: int = 1000,
        recorder=None,
    ) -> NodalField:
        """Full-multigrid ascent, then V-cycles to ``final_tol`` on the finest.

        The finest level's current state seeds the coarsest level (restricted
        level by level); every intermediate level is converged to
        ``level_tol`` before its solution is embedded one level up.
        """
        # seed downward: each level solves its own PDE during the ascent
        for li in range(len(self.levels) - 1, 0, -1):
            self.levels[li - 1].Q = self.levels[li].down.restrict(self.levels[li].Q)
        for lev in self.levels:
            lev.S = lev.op.source
        for li in range(len(self.levels)):
            if li == len(self.levels) - 1:
                self._cycle_until(li, final_tol, max_cycles, recorder)
            else:
                self._cycle_until(li, level_tol, max_cycles, recorder)
                up = self.levels[li + 1]
                up.Q = up.down.prolong(self.levels[li].Q)
                # intermediate levels acted as temporary finest: restore slots
                self.levels[li].S = self.levels[li].op.source
        return self.finest.Q

    def residual_norm(self) -> float:
        self._account(len(self.levels) - 1, 1)
        return self.finest.op.residual_norm(self.finest.Q, self.finest.S)
