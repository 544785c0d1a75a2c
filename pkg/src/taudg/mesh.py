"""2D quadrilateral meshes with tensor-product polynomial geometry mappings.

Elements carry their geometry as Lagrange control nodes on an equispaced
(m1+1) x (m2+1) grid over the reference square, so straight-sided and curved
elements share one code path.  Connectivity is derived from shared corner
vertices; every face stores which local side of each neighbour it is and
whether the neighbour traverses it in the opposite tangential direction.

Local side numbering: 0 = west (xi=-1), 1 = east (xi=+1), 2 = south (eta=-1),
3 = north (eta=+1).  Corner order inside an element is CCW starting at the
south-west corner: (SW, SE, NE, NW).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .errors import MeshError

WEST, EAST, SOUTH, NORTH = 0, 1, 2, 3
SIDE_NAMES = ("west", "east", "south", "north")

# ordered corner pair (start, end) of each side, in increasing tangential coordinate
_SIDE_CORNERS = {WEST: (0, 3), EAST: (1, 2), SOUTH: (0, 1), NORTH: (3, 2)}

# reference-space direction along (tangent) and across (normal) each side; 1-based
SIDE_TANGENT_DIR = {WEST: 2, EAST: 2, SOUTH: 1, NORTH: 1}
SIDE_NORMAL_DIR = {WEST: 1, EAST: 1, SOUTH: 2, NORTH: 2}


@dataclass
class Element:
    """One quad element; ``nodes`` are physical coords of the mapping control grid."""

    corners: np.ndarray                 # (4, 2)
    mapping_order: tuple[int, int]      # (m1, m2)
    nodes: np.ndarray                   # (m1+1, m2+1, 2), equispaced reference grid


@dataclass
class Face:
    left: int
    side_left: int
    right: int = -1                     # -1 marks a boundary face
    side_right: int = -1
    flip: bool = False
    tag: str | None = None

    @property
    def is_boundary(self) -> bool:
        return self.right < 0


@dataclass
class Mesh2D:
    elements: list[Element]
    faces: list[Face]
    boundary_tags: dict[str, list[int]] = field(default_factory=dict)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    def faces_of_element(self, e: int):
        return [(i, f) for i, f in enumerate(self.faces) if f.left == e or f.right == e]


def _control_grid(m1: int, m2: int):
    return np.linspace(-1.0, 1.0, m1 + 1), np.linspace(-1.0, 1.0, m2 + 1)


def bilinear_nodes(corners: np.ndarray, m1: int, m2: int) -> np.ndarray:
    """Control nodes of the straight-sided (bilinear) map on an (m1+1)x(m2+1) grid."""
    xi, eta = _control_grid(m1, m2)
    s = (xi[:, None] + 1.0) / 2.0
    t = (eta[None, :] + 1.0) / 2.0
    sw, se, ne, nw = corners
    nodes = (
        (1 - s)[:, :, None] * (1 - t)[:, :, None] * sw
        + s[:, :, None] * (1 - t)[:, :, None] * se
        + s[:, :, None] * t[:, :, None] * ne
        + (1 - s)[:, :, None] * t[:, :, None] * nw
    )
    return nodes


def make_element(corners, mapping_order=(1, 1), warp=None) -> Element:
    """Build an element; ``warp`` is an analytic (x, y) -> (x, y) map sampled
    at the control nodes, so the stored geometry is its degree-M interpolant."""
    corners = np.asarray(corners, dtype=float)
    m1, m2 = mapping_order
    nodes = bilinear_nodes(corners, m1, m2)
    if warp is not None:
        wx, wy = warp(nodes[:, :, 0], nodes[:, :, 1])
        nodes = np.stack([wx, wy], axis=-1)
        corners = np.array([nodes[0, 0], nodes[-1, 0], nodes[-1, -1], nodes[0, -1]])
    return Element(corners, (m1, m2), nodes)


def map_points(elem: Element, xi, eta) -> np.ndarray:
    """Physical coordinates at the tensor grid xi x eta, shape (len(xi), len(eta), 2)."""
    exi, eeta = _control_grid(*elem.mapping_order)
    l1 = spectral.lagrange_values(exi, xi)
    l2 = spectral.lagrange_values(eeta, eta)
    return np.einsum("ia,jb,abc->ijc", l1, l2, elem.nodes)


def map_derivatives(elem: Element, xi, eta):
    """Covariant basis a1 = dx/dxi, a2 = dx/deta at the tensor grid xi x eta."""
    exi, eeta = _control_grid(*elem.mapping_order)
    l1 = spectral.lagrange_values(exi, xi)
    l2 = spectral.lagrange_values(eeta, eta)
    d1 = spectral.lagrange_derivative_values(exi, xi)
    d2 = spectral.lagrange_derivative_values(eeta, eta)
    a1 = np.einsum("ia,jb,abc->ijc", d1, l2, elem.nodes)
    a2 = np.einsum("ia,jb,abc->ijc", l1, d2, elem.nodes)
    return a1, a2


def side_reference_points(side: int, t: np.ndarray):
    """Reference (xi, eta) arrays tracing a side at tangential coordinates t."""
    t = np.asarray(t, dtype=float)
    fixed = np.full(1, -1.0 if side in (WEST, SOUTH) else 1.0)
    if side in (WEST, EAST):
        return fixed, t
    return t, fixed


@dataclass
class ElementMetrics:
    jac: np.ndarray       # (n1+1, n2+1) volume Jacobian
    ja1: np.ndarray       # (n1+1, n2+1, 2) contravariant J a^1 = (y_eta, -x_eta)
    ja2: np.ndarray       # (n1+1, n2+1, 2) contravariant J a^2 = (-y_xi, x_xi)
    sizes: tuple[float, float]


def volume_metrics(elem: Element, order1: int, order2: int, index: int = -1) -> ElementMetrics:
    """Metric terms at the tensor Gauss nodes of the given solution orders.

    Uses the 2D cross-product form, which satisfies the discrete metric
    identities whenever the mapping order does not exceed the solution order;
    sub/isoparametric mappings are therefore a hard precondition.
    """
    m1, m2 = elem.mapping_order
    if m1 > order1 or m2 > order2:
        raise MeshError(
            f"element {index}: mapping order ({m1},{m2}) exceeds "
            f"solution order ({order1},{order2})"
        )
    q1 = spectral.gauss_nodes(order1)
    q2 = spectral.gauss_nodes(order2)
    a1, a2 = map_derivatives(elem, q1.nodes, q2.nodes)
    jac = a1[:, :, 0] * a2[:, :, 1] - a1[:, :, 1] * a2[:, :, 0]
    if np.min(jac) <= 0.0:
        raise MeshError(f"inverted element {index}: min Jacobian {np.min(jac):.3e}")
    ja1 = np.stack([a2[:, :, 1], -a2[:, :, 0]], axis=-1)
    ja2 = np.stack([-a1[:, :, 1], a1[:, :, 0]], axis=-1)
    ww = q1.weights[:, None] * q2.weights[None, :]
    h1 = float(np.sum(ww * np.linalg.norm(a1, axis=-1)) / 2.0)
    h2 = float(np.sum(ww * np.linalg.norm(a2, axis=-1)) / 2.0)
    return ElementMetrics(jac, ja1, ja2, (h1, h2))


def face_geometry(elem: Element, side: int, t: np.ndarray):
    """Surface Jacobian and outward unit normal along a side at tangential points t.

    Returns (points (m,2), sigma (m,), normal (m,2)); sigma*normal is the
    polynomial contravariant vector, so fluxes assembled as flux*sigma stay in
    the polynomial space of the mapping.
    """
    xi, eta = side_reference_points(side, t)
    a1, a2 = map_derivatives(elem, xi, eta)
    a1 = a1.reshape(-1, 2)
    a2 = a2.reshape(-1, 2)
    if side in (WEST, EAST):
        sign = 1.0 if side == EAST else -1.0
        ja = np.stack([a2[:, 1], -a2[:, 0]], axis=-1)
    else:
        sign = 1.0 if side == NORTH else -1.0
        ja = np.stack([-a1[:, 1], a1[:, 0]], axis=-1)
    sigma = np.linalg.norm(ja, axis=-1)
    normal = sign * ja / sigma[:, None]
    pts = map_points(elem, xi, eta).reshape(-1, 2)
    return pts, sigma, normal


def face_points(elem: Element, side: int, t: np.ndarray) -> np.ndarray:
    xi, eta = side_reference_points(side, t)
    return map_points(elem, xi, eta).reshape(-1, 2)


def _build_faces(quads: np.ndarray, tag_lists: dict[str, list[tuple[int, int]]]):
    """Derive faces by matching corner-vertex pairs of element sides."""
    by_key: dict[tuple[int, int], list[tuple[int, int, tuple[int, int]]]] = {}
    for e, quad in enumerate(quads):
        for side, (ca, cb) in _SIDE_CORNERS.items():
            va, vb = int(quad[ca]), int(quad[cb])
            key = (min(va, vb), max(va, vb))
            by_key.setdefault(key, []).append((e, side, (va, vb)))
    tag_of = {}
    for tag, pairs in tag_lists.items():
        for e, side in pairs:
            tag_of[(e, side)] = tag
    faces: list[Face] = []
    for key, entries in sorted(by_key.items()):
        if len(entries) > 2:
            raise MeshError(f"face with corner vertices {key} shared by >2 elements")
        if len(entries) == 2:
            (el, sl, pl), (er, sr, pr) = entries
            flip = pl != pr  # same ordered pair means same tangential direction
            if set(pl) != set(pr):
                raise MeshError("inconsistent face vertex pairing")
            faces.append(Face(el, sl, er, sr, flip))
        else:
            e, side, _ = entries[0]
            faces.append(Face(e, side, tag=tag_of.get((e, side), "boundary")))
    # deterministic order: interior faces by (left, side), then boundary faces
    faces.sort(key=lambda f: (f.is_boundary, f.left, f.side_left))
    tags: dict[str, list[int]] = {}
    for i, f in enumerate(faces):
        if f.is_boundary:
            tags.setdefault(f.tag, []).append(i)
    return faces, tags


def build_from_arrays(vertices, quads, boundary=None, mapping_order=(1, 1), warp=None) -> Mesh2D:
    vertices = np.asarray(vertices, dtype=float)
    quads = np.asarray(quads, dtype=int)
    elements = [
        make_element(vertices[quad], mapping_order=mapping_order, warp=warp)
        for quad in quads
    ]
    faces, tags = _build_faces(quads, boundary or {})
    return Mesh2D(elements, faces, tags)


def grade_coordinates(n: int, lo: float, hi: float, ratio: float, at_start: bool) -> np.ndarray:
    """n+1 coordinates whose cell sizes grow geometrically by ``ratio`` away
    from the graded end (smallest cell at that end)."""
    sizes = ratio ** np.arange(n, dtype=float)
    if not at_start:
        sizes = sizes[::-1]
    sizes *= (hi - lo) / sizes.sum()
    return lo + np.concatenate([[0.0], np.cumsum(sizes)])


def build_cartesian(
    nx: int,
    ny: int,
    bounds=(0.0, 1.0, 0.0, 1.0),
    grading: tuple[str, float] | None = None,
    mapping_order=(1, 1),
    warp=None,
) -> Mesh2D:
    """Structured quad mesh with boundary tags west/east/south/north.

    ``grading`` = (side name, ratio) clusters cells geometrically toward that
    side; ``warp`` curves the whole mesh through the control nodes at
    ``mapping_order``.
    """
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    if grading is not None:
        side, ratio = grading
        if side not in SIDE_NAMES:
            raise MeshError(f"unknown grading side {side!r}")
        if side in ("west", "east"):
            xs = grade_coordinates(nx, x0, x1, ratio, at_start=(side == "west"))
        else:
            ys = grade_coordinates(ny, y0, y1, ratio, at_start=(side == "south"))
    verts = np.array([[x, y] for y in ys for x in xs])
    vid = lambda i, j: j * (nx + 1) + i
    quads = []
    for j in range(ny):
        for i in range(nx):
            quads.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
    eid = lambda i, j: j * nx + i
    boundary = {
        "west": [(eid(0, j), WEST) for j in range(ny)],
        "east": [(eid(nx - 1, j), EAST) for j in range(ny)],
        "south": [(eid(i, 0), SOUTH) for i in range(nx)],
        "north": [(eid(i, ny - 1), NORTH) for i in range(nx)],
    }
    return build_from_arrays(verts, quads, boundary, mapping_order=mapping_order, warp=warp)


def extract_element(mesh: Mesh2D, e: int) -> Mesh2D:
    """Single-element mesh with identical geometry; all four sides become boundary."""
    elem = mesh.elements[e]
    copy = Element(elem.corners.copy(), elem.mapping_order, elem.nodes.copy())
    faces = [Face(0, s, tag=SIDE_NAMES[s]) for s in (WEST, EAST, SOUTH, NORTH)]
    tags = {SIDE_NAMES[s]: [s] for s in (WEST, EAST, SOUTH, NORTH)}
    return Mesh2D([copy], faces, tags)


def check_watertight(mesh: Mesh2D, probe_order: int = 8) -> float:
    """Max mismatch of shared-face physical points between both sides' mappings."""
    t = spectral.gauss_nodes(probe_order).nodes
    worst = 0.0
    for f in mesh.faces:
        if f.is_boundary:
            continue
        pl = face_points(mesh.elements[f.left], f.side_left, t)
        pr = face_points(mesh.elements[f.right], f.side_right, t)
        if f.flip:
            pr = pr[::-1]
        worst = max(worst, float(np.max(np.abs(pl - pr))))
    return worst


def write_mesh(mesh: Mesh2D, path) -> None:
    lines = ["# taudg quad mesh"]
    lines.append(f"elements {mesh.num_elements}")
    for elem in mesh.elements:
        m1, m2 = elem.mapping_order
        lines.append(f"mapping {m1} {m2}")
        for j in range(m2 + 1):
            for i in range(m1 + 1):
                x, y = elem.nodes[i, j]
                lines.append(f"{float(x)!r} {float(y)!r}")
    for tag, face_ids in sorted(mesh.boundary_tags.items()):
        lines.append(f"boundary {tag} {len(face_ids)}")
        for fi in face_ids:
            f = mesh.faces[fi]
            lines.append(f"{f.left} {f.side_left}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh2D:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    pos = 0

    def take(n=1):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshError("truncated mesh file")
        out = tokens[pos : pos + n]
        pos += n
        return out

    if take()[0] != "elements":
        raise MeshError("mesh file must start with 'elements <count>'")
    ne = int(take()[0])
    elements = []
    for _ in range(ne):
        kw, m1, m2 = take(3)
        if kw != "mapping":
            raise MeshError(f"expected 'mapping', got {kw!r}")
        m1, m2 = int(m1), int(m2)
        vals = np.array([float(v) for v in take(2 * (m1 + 1) * (m2 + 1))])
        nodes = vals.reshape(m2 + 1, m1 + 1, 2).transpose(1, 0, 2).copy()
        corners = np.array([nodes[0, 0], nodes[-1, 0], nodes[-1, -1], nodes[0, -1]])
        elements.append(Element(corners, (m1, m2), nodes))
    tag_lists: dict[str, list[tuple[int, int]]] = {}
    while pos < len(tokens):
        kw, tag, n = take(3)
        if kw != "boundary":
            raise MeshError(f"expected 'boundary', got {kw!r}")
        pairs = []
        for _ in range(int(n)):
            e, side = take(2)
            pairs.append((int(e), int(side)))
        tag_lists[tag] = pairs

    # connectivity from corner coincidence (exact float match of corner coords)
    corners = np.array([el.corners for el in elements])  # (ne, 4, 2)
    flat = corners.reshape(-1, 2)
    uniq, inverse = np.unique(flat.round(decimals=12), axis=0, return_inverse=True)
    quads = inverse.reshape(ne, 4)
    faces, tags = _build_faces(quads, tag_lists)
    return Mesh2D(elements, faces, tags)
