"""1D Gauss-Legendre collocation kernels.

Nodes/weights, barycentric Lagrange evaluation, collocation derivative
matrices and L2 transfer matrices between nodal spaces of different order.
Everything is dense and cached per polynomial order; caches are populated
construct-then-publish so concurrent readers only ever see finished objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEWTON_TOL = 1e-15
NEWTON_MAXIT = 200


@dataclass(frozen=True)
class Quadrature1D:
    """Gauss-Legendre rule of polynomial order ``order`` (order+1 nodes)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    bary: np.ndarray = field(repr=False)


def legendre_and_derivative(n: int, x: np.ndarray):
    """Evaluate P_n and P_n' by the three-term recurrence.

    Valid away from x = +-1 for the derivative (interior Gauss nodes only).
    """
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def _compute_gauss(order: int) -> Quadrature1D:
    n = order + 1  # number of nodes = roots of P_{order+1}
    if n == 1:
        nodes = np.zeros(1)
        weights = np.full(1, 2.0)
        return Quadrature1D(order, nodes, weights, barycentric_weights(nodes))
    # Chebyshev-type initial guesses, then Newton on the recurrence.
    k = np.arange(n)
    x = -np.cos(np.pi * (k + 0.75) / (n + 0.5))
    for _ in range(NEWTON_MAXIT):
        p, dp = legendre_and_derivative(n, x)
        dx = p / dp
        x -= dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    _, dp = legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    # symmetrise to kill the last bits of Newton noise
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return Quadrature1D(order, x, w, barycentric_weights(x))


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def lagrange_values(nodes: np.ndarray, x) -> np.ndarray:
    """Cardinal basis values l_j(x_i), shape (len(x), len(nodes))."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bary = barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    hit = np.isclose(diff, 0.0, rtol=0.0, atol=1e-14)
    diff = np.where(hit, 1.0, diff)
    terms = bary[None, :] / diff
    vals = terms / terms.sum(axis=1, keepdims=True)
    rows_hit = hit.any(axis=1)
    if rows_hit.any():
        vals[rows_hit] = hit[rows_hit].astype(float)
    return vals


def diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Collocation derivative matrix D_ij = l_j'(x_i) for arbitrary distinct nodes."""
    nodes = np.asarray(nodes, dtype=float)
    bary = barycentric_weights(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def lagrange_derivative_values(nodes: np.ndarray, x) -> np.ndarray:
    """Values l_j'(x_i) at arbitrary points; exact, via the degree-(m-1) interpolant."""
    return lagrange_values(nodes, x) @ diff_matrix(nodes)


_gauss_cache: dict[int, Quadrature1D] = {}
_diff_cache: dict[int, np.ndarray] = {}
_boundary_cache: dict[int, np.ndarray] = {}
_transfer_cache: dict[tuple[int, int], np.ndarray] = {}


def gauss_nodes(order: int) -> Quadrature1D:
    if order < 0:
        raise ValueError(f"polynomial order must be >= 0, got {order}")
    rule = _gauss_cache.get(order)
    if rule is None:
        rule = _compute_gauss(order)
        _gauss_cache[order] = rule
    return rule


def differentiation_matrix(order: int) -> np.ndarray:
    d = _diff_cache.get(order)
    if d is None:
        d = diff_matrix(gauss_nodes(order).nodes)
        d.setflags(write=False)
        _diff_cache[order] = d
    return d


def boundary_rows(order: int) -> np.ndarray:
    """Trace rows (2, order+1): cardinal values at xi = -1 (row 0) and +1 (row 1)."""
    b = _boundary_cache.get(order)
    if b is None:
        b = lagrange_values(gauss_nodes(order).nodes, np.array([-1.0, 1.0]))
        b.setflags(write=False)
        _boundary_cache[order] = b
    return b


def l2_projection(order_from: int, order_to: int) -> np.ndarray:
    """Nodal transfer matrix between Gauss spaces, shape (to+1, from+1).

    Raising order (to >= from) is plain interpolation, which embeds the
    polynomial exactly and is therefore the L2-optimal map.  Lowering order is
    the genuine L2 projection; with diagonal Gauss mass matrices it has the
    closed form  T_ij = w_j^from l_i^to(x_j^from) / w_i^to.
    """
    key = (order_from, order_to)
    t = _transfer_cache.get(key)
    if t is None:
        qf = gauss_nodes(order_from)
        qt = gauss_nodes(order_to)
        if order_to >= order_from:
            t = lagrange_values(qf.nodes, qt.nodes)
        else:
            vals = lagrange_values(qt.nodes, qf.nodes)  # l_i^to at from-nodes
            t = (qf.weights[None, :] * vals.T) / qt.weights[:, None]
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        _transfer_cache[key] = t
    return t
