"""
Background fluid triangulation and immersed closed curve.

The fluid mesh is a structured grid of ``nx * ny`` rectangles, each split
into two triangles along the lower-left to upper-right diagonal. The
structured layout gives O(1) point location and lets segment/mesh
intersection be computed from the three families of mesh lines
(vertical, horizontal and diagonal) instead of a general mesh walk.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GeometryError(ValueError):
    """Raised when a point or curve leaves the fluid box."""


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """
    Structured triangulation of an axis-aligned box.

    Attributes
    ----------
    vertices : (nv, 2) array
        Vertex coordinates, vertex ``(i, j)`` has index ``j*(nx+1) + i``.
    triangles : (nt, 3) int array
        Counterclockwise vertex triples. Cell ``c = j*nx + i`` owns the
        triangles ``2c`` (below the diagonal) and ``2c+1`` (above it).
    cell_diameters : (nt,) array
        Longest edge of each triangle (h_K).
    grid_index : (ny, nx, 2) int array
        Triangle ids owned by each structured cell.
    """

    nx: int
    ny: int
    box: tuple
    vertices: np.ndarray
    triangles: np.ndarray
    cell_diameters: np.ndarray
    grid_index: np.ndarray

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def hx(self):
        return (self.box[1] - self.box[0]) / self.nx

    @property
    def hy(self):
        return (self.box[3] - self.box[2]) / self.ny

    @property
    def mesh_size(self):
        """h_f, the grid spacing in x."""
        return self.hx

    @cached_property
    def areas(self):
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @cached_property
    def basis_gradients(self):
        """(nt, 3, 2) gradients of the three P1 hat functions per triangle."""
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        jac = np.stack([b - a, c - a], axis=2)  # columns are edge vectors
        inv = np.linalg.inv(jac)  # rows: grad lambda_1, grad lambda_2
        g = np.empty((self.n_triangles, 3, 2))
        g[:, 1] = inv[:, 0]
        g[:, 2] = inv[:, 1]
        g[:, 0] = -g[:, 1] - g[:, 2]
        return g

    @cached_property
    def boundary_vertices(self):
        x0, x1, y0, y1 = self.box
        i = np.arange(self.n_vertices) % (self.nx + 1)
        j = np.arange(self.n_vertices) // (self.nx + 1)
        on = (i == 0) | (i == self.nx) | (j == 0) | (j == self.ny)
        return np.flatnonzero(on)

    def contains(self, x, tol=0.0):
        x0, x1, y0, y1 = self.box
        x = np.asarray(x, dtype=float)
        return ((x[..., 0] >= x0 - tol) & (x[..., 0] <= x1 + tol)
                & (x[..., 1] >= y0 - tol) & (x[..., 1] <= y1 + tol))

    def barycentric(self, tri, x):
        """Barycentric coordinates of points ``x`` w.r.t. triangles ``tri``."""
        tri = np.asarray(tri)
        x = np.asarray(x, dtype=float)
        a = self.vertices[self.triangles[tri, 0]]
        g = self.basis_gradients[tri]
        lam = np.einsum('...kd,...d->...k', g, x - a)
        lam[..., 0] += 1.0
        return lam


def build_structured_mesh(nx, ny, box=(0.0, 1.0, 0.0, 1.0)):
    """
    Triangulate ``box = (x0, x1, y0, y1)`` with ``nx * ny`` split cells.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    x0, x1, y0, y1 = map(float, box)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00 = J * (nx + 1) + I
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    p = vertices[triangles]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    diam = np.linalg.norm(edges, axis=2).max(axis=1)
    grid_index = np.arange(2 * nx * ny).reshape(ny, nx, 2)
    return Mesh2D(nx, ny, (x0, x1, y0, y1), vertices, triangles, diam, grid_index)


def locate_points(mesh, x):
    """
    Vectorised point location.

    Returns the host triangle ids and barycentric coordinates. Points on
    shared edges or vertices are assigned to the containing triangle with
    the lowest id.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(mesh.contains(x)):
        bad = x[~mesh.contains(x)][0]
        raise GeometryError(f"point {tuple(bad)} lies outside the fluid box")
    x0, _, y0, _ = mesh.box
    xi = (x[:, 0] - x0) / mesh.hx
    eta = (x[:, 1] - y0) / mesh.hy
    # ceil - 1 sends points on a grid line to the cell with the lower index
    i = np.clip(np.ceil(xi).astype(np.int64) - 1, 0, mesh.nx - 1)
    j = np.clip(np.ceil(eta).astype(np.int64) - 1, 0, mesh.ny - 1)
    a = xi - i
    b = eta - j
    upper = b > a
    tri = mesh.grid_index[j, i, upper.astype(np.int64)]
    lam = np.where(upper[:, None],
                   np.column_stack([1.0 - b, a, b - a]),
                   np.column_stack([1.0 - a, a - b, b]))
    lam = np.clip(lam, 0.0, 1.0)
    lam /= lam.sum(axis=1, keepdims=True)
    return tri, lam


def locate_point(mesh, x):
    """Host triangle id and barycentric coordinates of a single point."""
    tri, lam = locate_points(mesh, np.asarray(x, dtype=float)[None, :])
    return int(tri[0]), lam[0]


@dataclass(frozen=True)
class SubSegment:
    host_triangle: int
    endpoints: np.ndarray
    parent_params: tuple

    @property
    def length(self):
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))


def _crossings(f0, f1):
    """Parameters t in (0, 1) at which f0 + t*(f1 - f0) is an integer."""
    if f1 == f0:
        return np.empty(0)
    lo, hi = min(f0, f1), max(f0, f1)
    ks = np.arange(np.floor(lo) + 1, np.ceil(hi))
    return (ks - f0) / (f1 - f0)


def intersect_segment(mesh, p0, p1, param_range=(0.0, 1.0)):
    """
    Split the straight segment ``p0 -> p1`` at every mesh edge it crosses.

    Parameters
    ----------
    mesh : Mesh2D
    p0, p1 : array_like
        Segment endpoints, both inside the closed box.
    param_range : (a, b)
        Parameter interval mapped affinely onto the segment.

    Returns
    -------
    list of SubSegment
        Ordered from ``p0`` to ``p1``; pieces shorter than
        ``1e-12 * h_f`` are dropped.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if not (mesh.contains(p0) and mesh.contains(p1)):
        raise GeometryError("segment endpoint outside the fluid box")
    x0, _, y0, _ = mesh.box
    xi0, xi1 = (p0[0] - x0) / mesh.hx, (p1[0] - x0) / mesh.hx
    eta0, eta1 = (p0[1] - y0) / mesh.hy, (p1[1] - y0) / mesh.hy
    ts = np.concatenate([_crossings(xi0, xi1), _crossings(eta0, eta1),
                         _crossings(eta0 - xi0, eta1 - xi1)])
    ts = np.sort(ts[(ts > 0.0) & (ts < 1.0)])

    length = np.linalg.norm(p1 - p0)
    tol_t = 1e-12 * mesh.mesh_size / length if length > 0 else np.inf
    breaks = [0.0]
    for t in ts:
        if t - breaks[-1] >= tol_t:
            breaks.append(t)
    if 1.0 - breaks[-1] >= tol_t or len(breaks) == 1:
        breaks.append(1.0)
    else:
        breaks[-1] = 1.0
    breaks = np.array(breaks)

    mids = 0.5 * (breaks[:-1] + breaks[1:])
    tris, _ = locate_points(mesh, p0 + mids[:, None] * (p1 - p0))
    a, b = param_range
    out = []
    for k, tri in enumerate(tris):
        t0, t1 = breaks[k], breaks[k + 1]
        ends = np.array([p0 + t0 * (p1 - p0), p0 + t1 * (p1 - p0)])
        out.append(SubSegment(int(tri), ends, (a + t0 * (b - a), a + t1 * (b - a))))
    return out


@dataclass(eq=False)
class CurveMesh:
    """
    Closed P1 curve parameterised over [0, 2*pi].

    ``params`` holds ``n_seg + 1`` values with the last one equal to
    ``params[0] + 2*pi``; node ``n_seg`` is node 0 (periodic indexing), so
    position arrays only store ``n_seg`` rows.
    """

    params: np.ndarray
    ref_positions: np.ndarray
    current_positions: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.current_positions is None:
            self.current_positions = self.ref_positions.copy()

    @property
    def n_nodes(self):
        return self.ref_positions.shape[0]

    @property
    def seg_lengths(self):
        return np.diff(self.params)

    @property
    def mesh_size(self):
        """h_s, the largest reference parameter step."""
        return float(self.seg_lengths.max())

    def segments(self):
        """(n_seg, 2) node indices of each segment, wrapping at the end."""
        i = np.arange(self.n_nodes)
        return np.column_stack([i, (i + 1) % self.n_nodes])

    def with_displacement(self, d):
        """Curve with ``current_positions = ref_positions + d``."""
        return CurveMesh(self.params, self.ref_positions,
                         self.ref_positions + np.asarray(d).reshape(self.n_nodes, 2, order='F'))

    def check_inside(self, mesh):
        x0, x1, y0, y1 = mesh.box
        p = self.current_positions
        ok = (p[:, 0] > x0) & (p[:, 0] < x1) & (p[:, 1] > y0) & (p[:, 1] < y1)
        if not np.all(ok) or not np.all(np.isfinite(p)):
            raise GeometryError("immersed curve left the open fluid box")


def build_ellipse_curve(n_seg, center=(0.5, 0.5), a=0.25 * np.sqrt(2),
                        b=0.25 / np.sqrt(2), box=(0.0, 1.0, 0.0, 1.0)):
    """
    Sample ``X(s) = center + (a cos s, b sin s)`` at ``s_i = 2*pi*i/n_seg``.
    """
    n_seg = int(n_seg)
    if n_seg < 3:
        raise ValueError("a closed curve needs at least 3 segments")
    params = 2.0 * np.pi * np.arange(n_seg + 1) / n_seg
    s = params[:-1]
    pos = np.column_stack([center[0] + a * np.cos(s), center[1] + b * np.sin(s)])
    x0, x1, y0, y1 = box
    if not np.all((pos[:, 0] > x0) & (pos[:, 0] < x1)
                  & (pos[:, 1] > y0) & (pos[:, 1] < y1)):
        raise GeometryError("curve is not strictly inside the fluid box")
    return CurveMesh(params, pos)
