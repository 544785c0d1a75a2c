"""Pseudo-time marching: Williamson low-storage RK3 driving A(Q) = S.

The three-stage scheme advances dQ/dt = S - A(Q) with one stored stage
vector.  Steady problems only care about the fixed point, so the step size
comes from a directional CFL bound and may optionally vary per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergedError, TimeScaleError
from .fields import NodalField
from .operators import DGOperator

# Williamson's published three-stage coefficients.
RK_A = (0.0, -5.0 / 9.0, -153.0 / 128.0)
RK_B = (1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0)


@dataclass(frozen=True)
class TimeConfig:
    """CFL constants and step mode for the pseudo-time marcher.

    ``local=True`` lets every element march at its own CFL limit; the steady
    state is unaffected because the converged residual is zero elementwise.
    """

    cfl_advective: float = 0.2
    cfl_viscous: float = 0.1
    local: bool = False

    def __post_init__(self):
        if self.cfl_advective <= 0.0 or self.cfl_viscous <= 0.0:
            raise ConfigError("CFL constants must be positive")


def element_dt(op: DGOperator, Q: NodalField, config: TimeConfig) -> np.ndarray:
    """Per-element step sizes min(dt_adv, dt_visc), minimized over directions.

    dt_adv = C_a * h_i / (s_max * N_i^2) and dt_visc = C_nu * h_i^2 /
    (mu * N_i^4), with s_max the element's peak characteristic speed.
    Elements with no finite limit report +inf.
    """
    of = op.orders
    mu = op.law.mu
    out = np.empty(of.num_elements)
    for g, ((n1, n2), ids) in enumerate(zip(of.group_orders, of.group_elements)):
        block = Q.blocks[g]
        smax = op.law.wave_speed(block).reshape(block.shape[0], -1).max(axis=1)
        sizes = op.group_ops[g].sizes
        dt = np.full(block.shape[0], np.inf)
        for n, h in ((max(n1, 1), sizes[:, 0]), (max(n2, 1), sizes[:, 1])):
            with np.errstate(divide="ignore"):
                adv = np.where(
                    smax > 0.0,
                    config.cfl_advective * h / (smax * n * n),
                    np.inf,
                )
            dt = np.minimum(dt, adv)
            if mu > 0.0:
                dt = np.minimum(dt, config.cfl_viscous * h * h / (mu * n**4))
        out[ids] = dt
    return out


def compute_dt(op: DGOperator, Q: NodalField, config: TimeConfig):
    """Pseudo-time step: global minimum (scalar) or per-element (array)."""
    dts = element_dt(op, Q, config)
    finite = np.isfinite(dts)
    if not finite.any():
        raise TimeScaleError(
            "no time scale: zero wave speed and zero viscosity everywhere"
        )
    if config.local:
        # elements with no scale of their own borrow the global minimum
        return np.where(finite, dts, dts[finite].min())
    return float(dts.min())


def rk3_step(
    op: DGOperator,
    Q: NodalField,
    dt,
    source: NodalField | None = None,
    work: NodalField | None = None,
) -> float:
    """One low-storage RK3 step of dQ/dt = S - A(Q), updating Q in place.

    Returns the first-stage residual inf-norm, a free steady-state monitor.
    ``work`` is the single stage vector; pass one in to reuse the buffer.
    """
    of = op.orders
    if work is None:
        work = NodalField.zeros(of)
    local = not np.isscalar(dt)
    r0 = 0.0
    for stage, (a, b) in enumerate(zip(RK_A, RK_B)):
        r = op.residual(Q, source)
        if stage == 0:
            r0 = r.norm_inf()
            for gb, rb in zip(work.blocks, r.blocks):
                gb[...] = rb
        else:
            work.scale_add(a, r)
        if local:
            for gi, ids in enumerate(of.group_elements):
                Q.blocks[gi] += (b * dt[ids])[:, None, None] * work.blocks[gi]
        else:
            Q.add_scaled(work, b * float(dt))
    return r0


def smooth(
    op: DGOperator,
    Q: NodalField,
    sweeps: int,
    config: TimeConfig,
    source: NodalField | None = None,
    history: list | None = None,
) -> list:
    """Run ``sweeps`` RK3 steps with a freshly computed dt each sweep.

    Appends each sweep's first-stage residual norm to ``history`` (a new list
    when omitted) and returns it.  A non-finite state after any sweep raises
    DivergedError naming the first offending element.
    """
    out = [] if history is None else history
    work = NodalField.zeros(op.orders)
    for _ in range(int(sweeps)):
        dt = compute_dt(op, Q, config)
        out.append(rk3_step(op, Q, dt, source=source, work=work))
        if not Q.all_finite():
            raise DivergedError(
                f"non-finite state in element {Q.first_bad_element()} "
                f"after sweep {len(out)}"
            )
    return out
