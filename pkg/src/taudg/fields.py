"""Per-element polynomial order fields and nodal solution storage.

Orders vary per element and per reference direction, so nodal data cannot live
in one rectangular array.  Elements sharing an order signature (N1, N2) are
grouped, and each group stores its data as one (B, N1+1, N2+1) block; all bulk
arithmetic then runs as a handful of vectorised block operations.  A
NodalField is permanently tied to the OrderField (and thus grouping) it was
allocated for; order fields are immutable and carry a global version stamp.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import spectral

_version_counter = itertools.count(1)


class OrderField:
    """Immutable per-element (N1, N2) polynomial orders with grouped layout."""

    def __init__(self, orders):
        orders = np.asarray(orders, dtype=int)
        if orders.ndim != 2 or orders.shape[1] != 2:
            raise ValueError("orders must have shape (num_elements, 2)")
        if np.min(orders) < 0:
            raise ValueError("polynomial orders must be >= 0")
        self.orders = orders.copy()
        self.orders.setflags(write=False)
        self.version = next(_version_counter)
        # deterministic grouping: signatures in ascending order
        sigs = sorted({(int(a), int(b)) for a, b in orders})
        self.group_orders: list[tuple[int, int]] = sigs
        self.group_elements: list[np.ndarray] = []
        self.element_slot = np.zeros((len(orders), 2), dtype=int)  # (group, row)
        for g, sig in enumerate(sigs):
            ids = np.flatnonzero((orders[:, 0] == sig[0]) & (orders[:, 1] == sig[1]))
            self.group_elements.append(ids)
            self.element_slot[ids, 0] = g
            self.element_slot[ids, 1] = np.arange(len(ids))

    @classmethod
    def uniform(cls, num_elements: int, n1: int, n2: int | None = None):
        if n2 is None:
            n2 = n1
        return cls(np.tile([n1, n2], (num_elements, 1)))

    @property
    def num_elements(self) -> int:
        return len(self.orders)

    def dofs(self) -> int:
        n = self.orders
        return int(np.sum((n[:, 0] + 1) * (n[:, 1] + 1)))

    def max_order(self) -> int:
        return int(self.orders.max())

    def max_order_dir(self, direction: int) -> int:
        return int(self.orders[:, direction - 1].max())

    def same_orders(self, other: "OrderField") -> bool:
        return self.orders.shape == other.orders.shape and bool(
            np.all(self.orders == other.orders)
        )

    def __eq__(self, other):
        return self is other

    def __hash__(self):
        return id(self)


class NodalField:
    """Scalar nodal data over all elements, stored as per-group blocks."""

    __slots__ = ("field", "blocks")

    def __init__(self, field: OrderField, blocks: list[np.ndarray]):
        self.field = field
        self.blocks = blocks

    @classmethod
    def zeros(cls, field: OrderField) -> "NodalField":
        blocks = [
            np.zeros((len(ids), n1 + 1, n2 + 1))
            for (n1, n2), ids in zip(field.group_orders, field.group_elements)
        ]
        return cls(field, blocks)

    @classmethod
    def full(cls, field: OrderField, value: float) -> "NodalField":
        out = cls.zeros(field)
        for b in out.blocks:
            b.fill(value)
        return out

    def copy(self) -> "NodalField":
        return NodalField(self.field, [b.copy() for b in self.blocks])

    def element(self, e: int) -> np.ndarray:
        g, r = self.field.element_slot[e]
        return self.blocks[g][r]

    def set_element(self, e: int, values) -> None:
        g, r = self.field.element_slot[e]
        self.blocks[g][r] = values

    def _check(self, other: "NodalField") -> None:
        if other.field is not self.field:
            raise ValueError(
                f"field mismatch: version {self.field.version} vs {other.field.version}"
            )

    def __add__(self, other):
        self._check(other)
        return NodalField(self.field, [a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other):
        self._check(other)
        return NodalField(self.field, [a - b for a, b in zip(self.blocks, other.blocks)])

    def __mul__(self, scalar: float):
        return NodalField(self.field, [b * scalar for b in self.blocks])

    __rmul__ = __mul__

    def add_scaled(self, other: "NodalField", scale: float) -> None:
        """In-place self += scale * other."""
        self._check(other)
        for a, b in zip(self.blocks, other.blocks):
            a += scale * b

    def scale_add(self, scale: float, other: "NodalField") -> None:
        """In-place self = scale * self + other (low-storage RK update shape)."""
        self._check(other)
        for a, b in zip(self.blocks, other.blocks):
            a *= scale
            a += b

    def norm_inf(self) -> float:
        return max((float(np.max(np.abs(b))) if b.size else 0.0) for b in self.blocks)

    def element_norms_inf(self) -> np.ndarray:
        out = np.zeros(self.field.num_elements)
        for ids, block in zip(self.field.group_elements, self.blocks):
            if block.size:
                out[ids] = np.max(np.abs(block), axis=(1, 2))
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(b).all() for b in self.blocks)

    def first_bad_element(self) -> int | None:
        for ids, block in zip(self.field.group_elements, self.blocks):
            bad = ~np.isfinite(block).reshape(len(ids), -1).all(axis=1)
            if bad.any():
                return int(ids[np.argmax(bad)])
        return None


def transfer(src: NodalField, target: OrderField) -> NodalField:
    """Move a field to new per-element orders by 1D L2 transfers per direction.

    Raising an order embeds the polynomial exactly; lowering applies the L2
    projection.  Used for adaptation hand-off; multigrid builds its own batched
    level transfers.
    """
    if target.num_elements != src.field.num_elements:
        raise ValueError("target order field has a different element count")
    out = NodalField.zeros(target)
    for e in range(target.num_elements):
        a1, a2 = src.field.orders[e]
        b1, b2 = target.orders[e]
        t1 = spectral.l2_projection(int(a1), int(b1))
        t2 = spectral.l2_projection(int(a2), int(b2))
        out.set_element(e, t1 @ src.element(e) @ t2.T)
    return out
