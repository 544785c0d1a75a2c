"""Nodal DG spatial operator on 2D quad meshes with per-element orders.

Collocated Legendre-Gauss quadrature, weak form.  The elemental system is

    M dQ/dt + F(Q) = M S,

with the diagonal mass matrix M = (w1 x w2) * J.  F collects the weak volume
term of the contravariant fluxes and the surface terms; interfaces couple
through a one-point numerical flux evaluated on a mortar at the higher of the
two tangential face orders (both traces are L2-projected up, the flux*sigma
product is L2-projected back to each side).  Viscous terms use a lifted
gradient with arithmetic-average interface values.

``apply(Q, isolated=True)`` evaluates the decoupled variant: every surface
term uses only the element's own trace (interior faces and physical
boundaries alike), which removes all neighbour and boundary influence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mesh as meshmod
from . import spectral
from .errors import ConfigError
from .fields import NodalField, OrderField


@dataclass
class _GroupOps:
    orders: tuple[int, int]
    w1: np.ndarray
    w2: np.ndarray
    a1: np.ndarray          # (w1 * D1) with index [m, i]
    a2: np.ndarray          # (w2 * D2) with index [k, j]
    bounds1: np.ndarray     # rows (2, n1+1): traces at xi = -1, +1
    bounds2: np.ndarray
    jac: np.ndarray         # (B, n1+1, n2+1)
    ja1: np.ndarray         # (B, n1+1, n2+1, 2)
    ja2: np.ndarray
    mass: np.ndarray
    inv_mass: np.ndarray
    coords: np.ndarray      # (B, n1+1, n2+1, 2)
    sizes: np.ndarray       # (B, 2) directional element sizes


@dataclass
class _Side:
    group: int
    row: int
    side: int
    order: int              # tangential face order
    weights: np.ndarray     # face quadrature weights at own order
    up: np.ndarray | None   # own order -> mortar (None when identity)
    down: np.ndarray | None  # mortar -> own order
    sigma: np.ndarray       # own-order surface Jacobian (isolated path)
    normal: np.ndarray      # own-order outward unit normal (isolated path)


@dataclass
class _FaceOp:
    left: _Side
    right: _Side | None
    flip: bool
    sigma: np.ndarray       # mortar surface Jacobian (left parametrization)
    normal: np.ndarray      # mortar outward-from-left unit normal
    ghost: np.ndarray | None  # boundary state at own-order face nodes
    tag: str | None


def _trace(block: np.ndarray, side: int, b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    if side == meshmod.WEST:
        return np.einsum("i,bij->bj", b1[0], block)
    if side == meshmod.EAST:
        return np.einsum("i,bij->bj", b1[1], block)
    if side == meshmod.SOUTH:
        return np.einsum("j,bij->bi", b2[0], block)
    return np.einsum("j,bij->bi", b2[1], block)


class DGOperator:
    """Discrete spatial operator for one (mesh, law, order field) triple."""

    def __init__(self, msh: meshmod.Mesh2D, law, orders: OrderField):
        if orders.num_elements != msh.num_elements:
            raise ConfigError("order field does not match the mesh element count")
        if getattr(law, "n_vars", 1) != 1:
            raise ConfigError("only scalar laws are supported")
        self.mesh = msh
        self.law = law
        self.orders = orders
        self.calls = {"apply": 0, "apply_isolated": 0}
        self._build_groups()
        self._build_faces()
        self.source = (
            self.project_function(law.source) if law.source is not None
            else NodalField.zeros(orders)
        )

    # construction ----------------------------------------------------------

    def _build_groups(self) -> None:
        of = self.orders
        self.group_ops: list[_GroupOps] = []
        for (n1, n2), ids in zip(of.group_orders, of.group_elements):
            q1 = spectral.gauss_nodes(n1)
            q2 = spectral.gauss_nodes(n2)
            d1 = spectral.differentiation_matrix(n1)
            d2 = spectral.differentiation_matrix(n2)
            mets = [
                meshmod.volume_metrics(self.mesh.elements[e], n1, n2, index=int(e))
                for e in ids
            ]
            jac = np.stack([m.jac for m in mets])
            ja1 = np.stack([m.ja1 for m in mets])
            ja2 = np.stack([m.ja2 for m in mets])
            mass = q1.weights[None, :, None] * q2.weights[None, None, :] * jac
            coords = np.stack(
                [meshmod.map_points(self.mesh.elements[e], q1.nodes, q2.nodes) for e in ids]
            )
            sizes = np.array([m.sizes for m in mets])
            self.group_ops.append(
                _GroupOps(
                    (n1, n2), q1.weights, q2.weights,
                    q1.weights[:, None] * d1, q2.weights[:, None] * d2,
                    spectral.boundary_rows(n1), spectral.boundary_rows(n2),
                    jac, ja1, ja2, mass, 1.0 / mass, coords, sizes,
                )
            )

    def _face_order(self, e: int, side: int) -> int:
        tdir = meshmod.SIDE_TANGENT_DIR[side]
        return int(self.orders.orders[e, tdir - 1])

    def _make_side(self, e: int, side: int, mortar: int) -> _Side:
        g, r = self.orders.element_slot[e]
        order = self._face_order(e, side)
        t_own = spectral.gauss_nodes(order)
        _, sigma, normal = meshmod.face_geometry(self.mesh.elements[e], side, t_own.nodes)
        up = None if mortar == order else spectral.l2_projection(order, mortar)
        down = None if mortar == order else spectral.l2_projection(mortar, order)
        return _Side(int(g), int(r), side, order, t_own.weights, up, down, sigma, normal)

    def _build_faces(self) -> None:
        self.face_ops: list[_FaceOp] = []
        need_ghost = any(f.is_boundary for f in self.mesh.faces)
        if need_ghost and self.law.exact is None:
            raise ConfigError("law provides no boundary data (exact field missing)")
        for f in self.mesh.faces:
            if f.is_boundary:
                side = self._make_side(f.left, f.side_left, self._face_order(f.left, f.side_left))
                pts = meshmod.face_points(
                    self.mesh.elements[f.left], f.side_left,
                    spectral.gauss_nodes(side.order).nodes,
                )
                ghost = np.asarray(self.law.exact(pts[:, 0], pts[:, 1]), dtype=float)
                self.face_ops.append(
                    _FaceOp(side, None, False, side.sigma, side.normal, ghost, f.tag)
                )
            else:
                ol = self._face_order(f.left, f.side_left)
                orr = self._face_order(f.right, f.side_right)
                m = max(ol, orr)
                left = self._make_side(f.left, f.side_left, m)
                right = self._make_side(f.right, f.side_right, m)
                _, sigma, normal = meshmod.face_geometry(
                    self.mesh.elements[f.left], f.side_left, spectral.gauss_nodes(m).nodes
                )
                self.face_ops.append(_FaceOp(left, right, f.flip, sigma, normal, None, None))

    # helpers -----------------------------------------------------------------

    def project_function(self, fn) -> NodalField:
        """Pointwise sampling of fn(x, y) at all solution nodes."""
        out = NodalField.zeros(self.orders)
        for g, gop in enumerate(self.group_ops):
            out.blocks[g][:] = fn(gop.coords[..., 0], gop.coords[..., 1])
        return out

    def mass_blocks(self) -> list[np.ndarray]:
        return [gop.mass for gop in self.group_ops]

    def _traces(self, blocks: list[np.ndarray]) -> list[dict[int, np.ndarray]]:
        out = []
        for g, gop in enumerate(self.group_ops):
            out.append(
                {
                    s: _trace(blocks[g], s, gop.bounds1, gop.bounds2)
                    for s in (meshmod.WEST, meshmod.EAST, meshmod.SOUTH, meshmod.NORTH)
                }
            )
        return out

    def _weak_div(self, g: int, ft1: np.ndarray, ft2: np.ndarray) -> np.ndarray:
        gop = self.group_ops[g]
        t1 = np.einsum("mi,bmj->bij", gop.a1, ft1) * gop.w2[None, None, :]
        t2 = np.einsum("kj,bik->bij", gop.a2, ft2) * gop.w1[None, :, None]
        return t1 + t2

    def _scatter(self, blocks: list[np.ndarray], side: _Side, vec: np.ndarray) -> None:
        gop = self.group_ops[side.group]
        if side.side in (meshmod.WEST, meshmod.EAST):
            bvec = gop.bounds1[0 if side.side == meshmod.WEST else 1]
            blocks[side.group][side.row] += np.outer(bvec, side.weights * vec)
        else:
            bvec = gop.bounds2[0 if side.side == meshmod.SOUTH else 1]
            blocks[side.group][side.row] += np.outer(side.weights * vec, bvec)

    @staticmethod
    def _to_mortar(vec: np.ndarray, side: _Side) -> np.ndarray:
        return vec if side.up is None else side.up @ vec

    @staticmethod
    def _from_mortar(vec: np.ndarray, side: _Side) -> np.ndarray:
        return vec if side.down is None else side.down @ vec

    def _side_value(self, traces, side: _Side) -> np.ndarray:
        return traces[side.group][side.side][side.row]

    # gradient lift -------------------------------------------------------------

    def _lift_gradient(self, Q: NodalField, tr_q, isolated: bool):
        """BR1-style lifted gradient components (Gx, Gy) as block lists."""
        comps = []
        for d in range(2):
            acc = [np.zeros_like(b) for b in Q.blocks]
            for g, gop in enumerate(self.group_ops):
                q = Q.blocks[g]
                acc[g] -= self._weak_div(g, q * gop.ja1[..., d], q * gop.ja2[..., d])
            comps.append(acc)
        for fop in self.face_ops:
            ql = self._side_value(tr_q, fop.left)
            if isolated or fop.right is None:
                if isolated:
                    qstar_l = ql
                else:
                    qstar_l = fop.ghost
                for d in range(2):
                    self._scatter(
                        comps[d], fop.left, qstar_l * fop.left.normal[:, d] * fop.left.sigma
                    )
                if fop.right is not None:  # isolated interior: own trace each side
                    qr = self._side_value(tr_q, fop.right)
                    for d in range(2):
                        self._scatter(
                            comps[d], fop.right, qr * fop.right.normal[:, d] * fop.right.sigma
                        )
                continue
            qr = self._side_value(tr_q, fop.right)
            if fop.flip:
                qr = qr[::-1]
            qm = 0.5 * (self._to_mortar(ql, fop.left) + self._to_mortar(qr, fop.right))
            for d in range(2):
                val = qm * fop.normal[:, d] * fop.sigma
                self._scatter(comps[d], fop.left, self._from_mortar(val, fop.left))
                back = self._from_mortar(val, fop.right)
                if fop.flip:
                    back = back[::-1]
                self._scatter(comps[d], fop.right, -back)
        for d in range(2):
            for g, gop in enumerate(self.group_ops):
                comps[d][g] *= gop.inv_mass
        return comps

    # main evaluation -------------------------------------------------------

    def apply(self, Q: NodalField, isolated: bool = False) -> NodalField:
        """Evaluate F(Q) (or the decoupled variant)."""
        if Q.field is not self.orders:
            raise ValueError("field/operator order mismatch")
        self.calls["apply_isolated" if isolated else "apply"] += 1
        law = self.law
        mu = law.mu
        tr_q = self._traces(Q.blocks)
        if mu > 0.0:
            gx, gy = self._lift_gradient(Q, tr_q, isolated)
            tr_gx = self._traces(gx)
            tr_gy = self._traces(gy)
        out = NodalField.zeros(self.orders)

        for g, gop in enumerate(self.group_ops):
            f, gf = law.advective_flux(Q.blocks[g])
            if mu > 0.0:
                f = f - mu * gx[g]
                gf = gf - mu * gy[g]
            ft1 = gop.ja1[..., 0] * f + gop.ja1[..., 1] * gf
            ft2 = gop.ja2[..., 0] * f + gop.ja2[..., 1] * gf
            out.blocks[g] -= self._weak_div(g, ft1, ft2)

        for fop in self.face_ops:
            ql = self._side_value(tr_q, fop.left)
            if fop.right is None or isolated:
                # own-trace (isolated) or boundary flux, at own face order
                sides = [(fop.left, ql)]
                if isolated and fop.right is not None:
                    sides.append((fop.right, self._side_value(tr_q, fop.right)))
                for side, q_in in sides:
                    if isolated:
                        f_in, g_in = law.advective_flux(q_in)
                        flux = f_in * side.normal[:, 0] + g_in * side.normal[:, 1]
                    else:
                        flux = law.riemann_flux(q_in, fop.ghost, side.normal)
                    if mu > 0.0:
                        gxn = self._side_value(tr_gx, side)
                        gyn = self._side_value(tr_gy, side)
                        flux = flux - mu * (gxn * side.normal[:, 0] + gyn * side.normal[:, 1])
                    self._scatter(out.blocks, side, flux * side.sigma)
                continue

            qr = self._side_value(tr_q, fop.right)
            if fop.flip:
                qr = qr[::-1]
            qlm = self._to_mortar(ql, fop.left)
            qrm = self._to_mortar(qr, fop.right)
            flux = law.riemann_flux(qlm, qrm, fop.normal)
            if mu > 0.0:
                gxl = self._to_mortar(self._side_value(tr_gx, fop.left), fop.left)
                gyl = self._to_mortar(self._side_value(tr_gy, fop.left), fop.left)
                gxr = self._side_value(tr_gx, fop.right)
                gyr = self._side_value(tr_gy, fop.right)
                if fop.flip:
                    gxr = gxr[::-1]
                    gyr = gyr[::-1]
                gxm = 0.5 * (gxl + self._to_mortar(gxr, fop.right))
                gym = 0.5 * (gyl + self._to_mortar(gyr, fop.right))
                flux = flux - mu * (gxm * fop.normal[:, 0] + gym * fop.normal[:, 1])
            val = flux * fop.sigma
            self._scatter(out.blocks, fop.left, self._from_mortar(val, fop.left))
            back = self._from_mortar(val, fop.right)
            if fop.flip:
                back = back[::-1]
            self._scatter(out.blocks, fop.right, -back)
        return out

    def m_inv_apply(self, Q: NodalField, isolated: bool = False) -> NodalField:
        """A(Q) = M^{-1} F(Q)."""
        out = self.apply(Q, isolated=isolated)
        for g, gop in enumerate(self.group_ops):
            out.blocks[g] *= gop.inv_mass
        return out

    def residual(self, Q: NodalField, source: NodalField | None = None) -> NodalField:
        """r = S - M^{-1} F(Q); S defaults to the sampled PDE source."""
        src = self.source if source is None else source
        r = self.m_inv_apply(Q)
        for g in range(len(r.blocks)):
            r.blocks[g] = src.blocks[g] - r.blocks[g]
        return r

    def residual_norm(self, Q: NodalField, source: NodalField | None = None) -> float:
        return self.residual(Q, source).norm_inf()

    def truncation_from_avalue(self, a_value: NodalField) -> np.ndarray:
        """Elementwise inf-norms of M (S_pde - A(Q)), given A(Q) already evaluated."""
        tau = NodalField.zeros(self.orders)
        for g, gop in enumerate(self.group_ops):
            tau.blocks[g] = gop.mass * (self.source.blocks[g] - a_value.blocks[g])
        return tau.element_norms_inf()

    def truncation(self, Q: NodalField, isolated: bool = False) -> np.ndarray:
        """Elementwise inf-norms of M S_pde - F(Q) (or the decoupled variant)."""
        return self.truncation_from_avalue(self.m_inv_apply(Q, isolated=isolated))

    # diagnostics -------------------------------------------------------------

    def l2_error(self, Q: NodalField, fn=None, extra: int = 4) -> float:
        """Over-integrated global L2 error against fn (default: the exact field)."""
        fn = fn or self.law.exact
        if fn is None:
            raise ConfigError("no exact field to measure the error against")
        total = 0.0
        for g, ((n1, n2), ids) in enumerate(
            zip(self.orders.group_orders, self.orders.group_elements)
        ):
            m1, m2 = n1 + extra, n2 + extra
            t1 = spectral.l2_projection(n1, m1)
            t2 = spectral.l2_projection(n2, m2)
            q1 = spectral.gauss_nodes(m1)
            q2 = spectral.gauss_nodes(m2)
            fine = np.einsum("ai,bj,rij->rab", t1, t2, Q.blocks[g])
            ww = q1.weights[:, None] * q2.weights[None, :]
            for k, e in enumerate(ids):
                em = meshmod.volume_metrics(self.mesh.elements[e], m1, m2, index=int(e))
                pts = meshmod.map_points(self.mesh.elements[e], q1.nodes, q2.nodes)
                diff = fine[k] - fn(pts[..., 0], pts[..., 1])
                total += float(np.sum(ww * em.jac * diff * diff))
        return float(np.sqrt(total))
