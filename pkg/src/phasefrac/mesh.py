"""Triangular meshes on rectangles: generation, geometry, point location and
P1 interpolation between meshes that share a physical domain.

The same ``TriMesh`` type is used for the physical mesh and for the
computational meshes of the moving-mesh method; they differ only in vertex
coordinates, never in connectivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

INTERIOR, BOTTOM, TOP, LEFT, RIGHT, CORNER = range(6)
MARKER_NAMES = ("interior", "bottom", "top", "left", "right", "corner")
SIDES = ("bottom", "top", "left", "right")


class DegenerateElementError(ValueError):
    """Raised when an element has zero or negative signed area."""

    def __init__(self, element: int, area: float):
        super().__init__(f"element {element} is degenerate or inverted (signed area {area:.3e})")
        self.element = element
        self.area = area


class PointLocationError(ValueError):
    """Raised when a point lies outside every element of a mesh."""

    def __init__(self, point, nearest: int):
        super().__init__(f"point {tuple(np.round(point, 15))} lies outside the mesh "
                         f"(nearest element {nearest})")
        self.point = np.asarray(point)
        self.nearest = nearest


class Rect(NamedTuple):
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.width, self.height))

    def contains(self, p, tol: float = 0.0) -> bool:
        x, y = p
        return (self.x0 - tol <= x <= self.x1 + tol) and (self.y0 - tol <= y <= self.y1 + tol)


class ElementGeometry(NamedTuple):
    edge_matrix: np.ndarray
    area: float


class VertexPatch(NamedTuple):
    vertex: int
    elements: np.ndarray
    local_index: np.ndarray


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable simplicial mesh of a rectangle.

    Attributes
    ----------
    vertices : (N_v, 2) float array
    elements : (N, 3) int array, counterclockwise
    boundary_markers : (N_v,) int array with values ``INTERIOR`` ... ``CORNER``
    domain : Rect
        The rectangle covered by the mesh.
    """

    vertices: np.ndarray
    elements: np.ndarray
    boundary_markers: np.ndarray
    domain: Rect
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        e = np.ascontiguousarray(self.elements, dtype=np.int64)
        m = np.ascontiguousarray(self.boundary_markers, dtype=np.int8)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (N_v, 2)")
        if e.ndim != 2 or e.shape[1] != 3:
            raise ValueError("elements must have shape (N, 3)")
        if e.size and (e.min() < 0 or e.max() >= len(v)):
            raise ValueError("element vertex index out of range")
        if m.shape != (len(v),):
            raise ValueError("one boundary marker per vertex is required")
        for a in (v, e, m):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "elements", e)
        object.__setattr__(self, "boundary_markers", m)
        object.__setattr__(self, "domain", Rect(*map(float, self.domain)))

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    N = n_elements
    N_v = n_vertices

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity and markers, new coordinates.

        Topological caches (neighbours, patches) are shared with the new mesh.
        """
        shared = {k: v for k, v in self._cache.items() if k in _TOPOLOGICAL_KEYS}
        return TriMesh(vertices, self.elements, self.boundary_markers, self.domain, shared)

    # geometry ------------------------------------------------------------

    def edge_matrices(self) -> np.ndarray:
        """(N, 2, 2) array of ``[x1 - x0, x2 - x0]`` (edges as columns)."""
        p = self.vertices[self.elements]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def areas(self) -> np.ndarray:
        """Element areas; raises ``DegenerateElementError`` on the first bad element."""
        areas = self.signed_areas()
        bad = np.flatnonzero(~(areas > 0.0))
        if bad.size:
            raise DegenerateElementError(int(bad[0]), float(areas[bad[0]]))
        return areas

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def p1_gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of the three P1 hat functions on each element.

        Returns ``(grads, areas)`` with ``grads`` of shape (N, 3, 2).
        """
        areas = self.areas()
        p = self.vertices[self.elements]
        # grad phi_i = perp(x_{i+2} - x_{i+1}) / (2|K|)
        x, y = p[..., 0], p[..., 1]
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        grads = np.stack([gx, gy], axis=-1) / (2.0 * areas)[:, None, None]
        return grads, areas

    # topology ------------------------------------------------------------

    def neighbors(self) -> np.ndarray:
        """(N, 3) array: element across the edge opposite local vertex i, or -1."""
        if "neighbors" not in self._cache:
            self._cache["neighbors"] = _element_neighbors(self.elements)
        return self._cache["neighbors"]

    def vertex_neighbors(self) -> list[np.ndarray]:
        """Vertices sharing an element with each vertex (the one-ring), sorted."""
        if "vertex_neighbors" not in self._cache:
            n = self.n_vertices
            e = self.elements
            rows = np.repeat(e, 3, axis=1).ravel()
            cols = np.tile(e, (1, 3)).ravel()
            keep = rows != cols
            pairs = np.unique(np.stack([rows[keep], cols[keep]], axis=1), axis=0)
            split = np.searchsorted(pairs[:, 0], np.arange(1, n))
            self._cache["vertex_neighbors"] = np.split(pairs[:, 1], split)
        return self._cache["vertex_neighbors"]

    def side_vertices(self, side: str) -> np.ndarray:
        """Indices of vertices on one side of the rectangle, corners included."""
        if side not in SIDES:
            raise KeyError(f"unknown boundary tag {side!r}; expected one of {SIDES}")
        code = SIDES.index(side) + 1
        m = self.boundary_markers
        idx = np.flatnonzero(m == code)
        corners = np.flatnonzero(m == CORNER)
        cv = self.vertices[corners]
        r = self.domain
        on = {
            "bottom": cv[:, 1] == r.y0,
            "top": cv[:, 1] == r.y1,
            "left": cv[:, 0] == r.x0,
            "right": cv[:, 0] == r.x1,
        }[side]
        return np.sort(np.concatenate([idx, corners[on]]))

    def boundary_edges(self) -> np.ndarray:
        """(n_b, 2) vertex pairs of edges that belong to a single element."""
        nb = self.neighbors()
        k, i = np.nonzero(nb < 0)
        e = self.elements
        return np.stack([e[k, (i + 1) % 3], e[k, (i + 2) % 3]], axis=1)

    def check(self) -> None:
        """Validate invariants: positive areas and boundary vertices on the boundary."""
        self.areas()
        r = self.domain
        tol = 1e-12 * r.diameter
        v, m = self.vertices, self.boundary_markers
        for code, coord, val in ((BOTTOM, 1, r.y0), (TOP, 1, r.y1), (LEFT, 0, r.x0), (RIGHT, 0, r.x1)):
            sel = m == code
            if np.any(np.abs(v[sel, coord] - val) > tol):
                raise ValueError(f"{MARKER_NAMES[code]} vertex left its boundary edge")
        if np.any((v[:, 0] < r.x0 - tol) | (v[:, 0] > r.x1 + tol)
                  | (v[:, 1] < r.y0 - tol) | (v[:, 1] > r.y1 + tol)):
            raise ValueError("vertex outside the domain rectangle")
        on_bnd = np.zeros(self.n_vertices, dtype=bool)
        on_bnd[self.boundary_edges().ravel()] = True
        if np.any(on_bnd & (m == INTERIOR)):
            raise ValueError("boundary vertex carries the interior tag")


_TOPOLOGICAL_KEYS = {"neighbors", "vertex_neighbors", "patches", "patch_arrays", "two_ring"}


def _element_neighbors(elements: np.ndarray) -> np.ndarray:
    n = len(elements)
    # edge opposite local vertex i joins (i+1, i+2)
    a = np.concatenate([elements[:, 1], elements[:, 2], elements[:, 0]])
    b = np.concatenate([elements[:, 2], elements[:, 0], elements[:, 1]])
    owner = np.tile(np.arange(n), 3)
    local = np.repeat(np.arange(3), n)
    key = np.minimum(a, b) * (elements.max() + 1) + np.maximum(a, b)
    order = np.argsort(key, kind="stable")
    ks = key[order]
    same = np.flatnonzero(ks[1:] == ks[:-1])
    nb = np.full((n, 3), -1, dtype=np.int64)
    i, j = order[same], order[same + 1]
    nb[owner[i], local[i]] = owner[j]
    nb[owner[j], local[j]] = owner[i]
    return nb


def _orient_ccw(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = vertices[elements]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    cw = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] < 0
    elements = elements.copy()
    elements[cw, 1], elements[cw, 2] = elements[cw, 2], elements[cw, 1].copy()
    return elements


def mark_boundary(vertices: np.ndarray, rect: Rect) -> np.ndarray:
    """Geometric boundary tags for vertices of a mesh on ``rect``."""
    tol = 1e-12 * rect.diameter
    x, y = vertices[:, 0], vertices[:, 1]
    b = np.abs(y - rect.y0) <= tol
    t = np.abs(y - rect.y1) <= tol
    l = np.abs(x - rect.x0) <= tol
    r = np.abs(x - rect.x1) <= tol
    m = np.full(len(vertices), INTERIOR, dtype=np.int8)
    m[b] = BOTTOM
    m[t] = TOP
    m[l] = LEFT
    m[r] = RIGHT
    m[(b | t) & (l | r)] = CORNER
    return m


def build_structured_mesh(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> TriMesh:
    """Rectangular grid with each cell split into four triangles by its diagonals.

    Grid vertices come first in row-major order (x fastest), followed by the
    cell centres, so the numbering is deterministic.

    >>> m = build_structured_mesh(1, 1)
    >>> m.N, m.N_v
    (4, 5)
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be positive integers, got nx={nx}, ny={ny}")
    rect = Rect(*map(float, rect))
    if not (rect.width > 0 and rect.height > 0):
        raise ValueError(f"degenerate rectangle {tuple(rect)}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(rect.x0, rect.x1, nx + 1)
    ys = np.linspace(rect.y0, rect.y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centres])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    c = (nx + 1) * (ny + 1) + j * nx + i
    tris = np.stack([
        np.stack([v00, v10, c], axis=1),  # bottom
        np.stack([v10, v11, c], axis=1),  # right
        np.stack([v11, v01, c], axis=1),  # top
        np.stack([v01, v00, c], axis=1),  # left
    ], axis=1).reshape(-1, 3)
    tris = _orient_ccw(vertices, tris)
    mesh = TriMesh(vertices, tris, mark_boundary(vertices, rect), rect)
    mesh.areas()
    return mesh


def element_geometry(mesh: TriMesh, k: int) -> ElementGeometry:
    if not 0 <= k < mesh.n_elements:
        raise IndexError(f"element index {k} out of range [0, {mesh.n_elements})")
    p = mesh.vertices[mesh.elements[k]]
    E = np.column_stack([p[1] - p[0], p[2] - p[0]])
    area = 0.5 * float(np.linalg.det(E))
    scale = max(float(np.abs(E).max()), np.finfo(float).tiny)
    if not area > 1e-14 * scale * scale:
        raise DegenerateElementError(k, area)
    return ElementGeometry(E, area)


def _patch_arrays(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSR-style flattening of vertex patches: (offsets, elements, local index)."""
    if "patch_arrays" not in mesh._cache:
        flat = mesh.elements.ravel()
        order = np.argsort(flat, kind="stable")
        elems = order // 3
        local = order % 3
        counts = np.bincount(flat, minlength=mesh.n_vertices)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        mesh._cache["patch_arrays"] = (offsets, elems, local)
    return mesh._cache["patch_arrays"]


def vertex_patches(mesh: TriMesh) -> list[VertexPatch]:
    """Element patch of every vertex with the vertex's local index in each element."""
    if "patches" not in mesh._cache:
        offsets, elems, local = _patch_arrays(mesh)
        mesh._cache["patches"] = [
            VertexPatch(j, elems[offsets[j]:offsets[j + 1]], local[offsets[j]:offsets[j + 1]])
            for j in range(mesh.n_vertices)
        ]
    return mesh._cache["patches"]


# point location ------------------------------------------------------------

def _barycentric(mesh: TriMesh, elems: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.elements[elems]]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    r = pts - p[:, 0]
    det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    l1 = (r[:, 0] * b[:, 1] - r[:, 1] * b[:, 0]) / det
    l2 = (a[:, 0] * r[:, 1] - a[:, 1] * r[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def _brute_force(mesh: TriMesh, pts: np.ndarray, tol: float, chunk: int = 2048):
    n = len(pts)
    found = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    worst = np.full(n, -np.inf)
    nearest = np.zeros(n, dtype=np.int64)
    p = mesh.vertices[mesh.elements]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    for s in range(0, n, chunk):
        q = pts[s:s + chunk]
        r = q[:, None, :] - p[None, :, 0]
        l1 = (r[..., 0] * b[None, :, 1] - r[..., 1] * b[None, :, 0]) / det
        l2 = (a[None, :, 0] * r[..., 1] - a[None, :, 1] * r[..., 0]) / det
        l0 = 1.0 - l1 - l2
        mn = np.minimum(np.minimum(l0, l1), l2)
        best = np.argmax(mn, axis=1)
        rows = np.arange(len(q))
        worst[s:s + chunk] = mn[rows, best]
        nearest[s:s + chunk] = best
        ok = mn[rows, best] >= -tol
        found[s:s + chunk][ok] = best[ok]
        bary[s:s + chunk] = np.stack([l0[rows, best], l1[rows, best], l2[rows, best]], axis=1)
    return found, bary, nearest


def locate_points(mesh: TriMesh, points, start=None, tol: float | None = None):
    """Locate many points at once.

    Each point walks across element neighbours from a start element (by
    default the last element hit on this mesh, else element 0) towards the
    edge with the most negative barycentric coordinate. Points whose walk
    leaves the mesh or stalls are resolved by a brute-force scan.

    Returns ``(elements, barycentric)``; raises ``PointLocationError`` if any
    point lies outside the mesh.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if tol is None:
        tol = 1e-12 * mesh.domain.diameter
    # barycentric tolerance relative to the element scale
    btol = max(tol / max(np.sqrt(mesh.signed_areas().min()), 1e-300), 1e-12) if n else 0.0
    if start is None:
        start = np.full(n, mesh._cache.get("last_hit", 0), dtype=np.int64)
    cur = np.broadcast_to(np.asarray(start, dtype=np.int64), (n,)).copy()
    cur = np.clip(cur, 0, mesh.n_elements - 1)
    nb = mesh.neighbors()
    done = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    bary = np.zeros((n, 3))
    active = np.arange(n)
    max_steps = 4 * int(np.sqrt(mesh.n_elements)) + 50
    for _ in range(max_steps):
        if active.size == 0:
            break
        lam = _barycentric(mesh, cur[active], pts[active])
        worst = lam.argmin(axis=1)
        inside = lam[np.arange(len(active)), worst] >= -btol
        hit = active[inside]
        bary[hit] = lam[inside]
        done[hit] = True
        walk = active[~inside]
        nxt = nb[cur[walk], worst[~inside]]
        off = nxt < 0
        failed[walk[off]] = True
        cur[walk[~off]] = nxt[~off]
        active = walk[~off]
    failed[active] = True
    todo = np.flatnonzero(failed)
    if todo.size:
        found, lam, nearest = _brute_force(mesh, pts[todo], btol)
        bad = found < 0
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise PointLocationError(pts[todo[i]], int(nearest[i]))
        cur[todo] = found
        bary[todo] = lam
    if n:
        mesh._cache["last_hit"] = int(cur[-1])
    return cur, bary


def locate_point(mesh: TriMesh, p, start: int | None = None, tol: float | None = None):
    """Element containing ``p`` and the barycentric coordinates of ``p`` in it."""
    p = np.asarray(p, dtype=float).reshape(1, 2)
    if not mesh.domain.contains(p[0], tol=1e-12 * mesh.domain.diameter):
        centroids = mesh.centroids()
        nearest = int(np.argmin(np.sum((centroids - p) ** 2, axis=1)))
        raise PointLocationError(p[0], nearest)
    elems, bary = locate_points(mesh, p, None if start is None else [start], tol)
    return int(elems[0]), bary[0]


def interpolate_field(src_mesh: TriMesh, src_field, dst_mesh: TriMesh, start=None) -> np.ndarray:
    """Evaluate the P1 interpolant of a nodal field at the vertices of another mesh.

    ``src_field`` may be (N_v,) or (N_v, k). Barycentric weights are clipped
    to [0, 1] and renormalised, so the output never leaves the input range.
    """
    f = np.asarray(src_field, dtype=float)
    if f.shape[0] != src_mesh.n_vertices:
        raise ValueError("field length does not match source mesh")
    if dst_mesh is src_mesh:
        return f.copy()
    if start is None and dst_mesh.n_vertices == src_mesh.n_vertices \
            and np.array_equal(dst_mesh.elements, src_mesh.elements):
        # same connectivity: start each walk from an element incident to the same vertex
        offsets, elems, _ = _patch_arrays(src_mesh)
        start = elems[offsets[:-1]]
    elems, lam = locate_points(src_mesh, dst_mesh.vertices, start)
    lam = np.clip(lam, 0.0, 1.0)
    lam /= lam.sum(axis=1, keepdims=True)
    nodes = src_mesh.elements[elems]
    if f.ndim == 1:
        out = np.einsum("ij,ij->i", lam, f[nodes])
    else:
        out = np.einsum("ij,ijk->ik", lam, f[nodes])
    # exact reproduction at coincident vertices
    top = lam.argmax(axis=1)
    snap = lam[np.arange(len(lam)), top] >= 1.0 - 1e-13
    out[snap] = f[nodes[snap, top[snap]]]
    return out
