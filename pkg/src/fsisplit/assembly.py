"""
Sparse assembly of the fluid, solid and coupling operators.

Vector fields are stored component-blocked: a P1 velocity on a mesh with
``nv`` vertices is ``[u_x (nv), u_y (nv)]`` and a curve field with ``ns``
nodes is ``[w_x (ns), w_y (ns)]``. Scalar operators are assembled once and
lifted to vectors with ``kron(I_2, .)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import intersect_segment, locate_points

# 2-point Gauss rule on [0, 1]
GAUSS2_X = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)
GAUSS2_W = np.array([0.5, 0.5])


@dataclass(frozen=True)
class PhysicsParams:
    rho_f: float = 1.0
    rho_s: float = 1.0
    mu: float = 1.0
    kappa: float = 2.0
    gamma: float = 0.1

    def __post_init__(self):
        for name in ("rho_f", "rho_s", "mu", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        # kappa = 0 is allowed: it switches elasticity off for scheme comparisons
        if not self.kappa >= 0:
            raise ValueError("kappa must be nonnegative")


@dataclass(frozen=True)
class DofMap:
    """
    Offsets of the unknown blocks in the global step system.

    Layout: velocity, pressure, mean-pressure scalar, multiplier, solid
    velocity. Multiplier and solid blocks share one curve index set.
    """

    n_vertices: int
    n_nodes: int

    @property
    def n_u(self):
        return 2 * self.n_vertices

    @property
    def n_p(self):
        return self.n_vertices

    @property
    def n_w(self):
        return 2 * self.n_nodes

    @property
    def sizes(self):
        return {"velocity": self.n_u, "pressure": self.n_p, "mean": 1,
                "multiplier": self.n_w, "solid": self.n_w}

    @property
    def offsets(self):
        out, k = {}, 0
        for name, n in self.sizes.items():
            out[name] = k
            k += n
        return out

    @property
    def size(self):
        return sum(self.sizes.values())

    def slice(self, name):
        k = self.offsets[name]
        return slice(k, k + self.sizes[name])


def _vec(a):
    return sparse.kron(sparse.identity(2, format='csr'), a, format='csr')


def _assemble(mesh, local):
    """Scatter (nt, 3, 3) local matrices into a scalar nv x nv CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


P1_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def scalar_mass(mesh):
    """Density-free P1 mass matrix of one scalar component."""
    return _assemble(mesh, mesh.areas[:, None, None] * P1_MASS_REF)


def fluid_mass(mesh, rho_f=1.0):
    return _vec(rho_f * scalar_mass(mesh))


def viscous_stiffness(mesh, mu):
    """Matrix of ``2 mu (eps(u), eps(v))`` on the velocity space."""
    g = mesh.basis_gradients
    gx, gy = g[:, :, 0], g[:, :, 1]
    A = mesh.areas[:, None, None]
    xx = np.einsum('ti,tj->tij', gx, gx)
    yy = np.einsum('ti,tj->tij', gy, gy)
    xy = np.einsum('ti,tj->tij', gy, gx)
    # eps:eps = ux,x vx,x + uy,y vy,y + (ux,y + uy,x)(vx,y + vy,x)/2
    Kxx = 2 * mu * A * (xx + 0.5 * yy)
    Kyy = 2 * mu * A * (yy + 0.5 * xx)
    Kxy = 2 * mu * A * 0.5 * xy  # row u_x test, column u_y trial: vx,y * uy,x
    Kxx, Kyy = _assemble(mesh, Kxx), _assemble(mesh, Kyy)
    Kxy = _assemble(mesh, Kxy)
    return sparse.bmat([[Kxx, Kxy], [Kxy.T, Kyy]], format='csr')


def divergence(mesh):
    """``B[q, u] = (div u, q)``, shape (n_p, n_u)."""
    g = mesh.basis_gradients
    w = mesh.areas[:, None, None] / 3.0
    Bx = _assemble(mesh, w * np.broadcast_to(g[:, None, :, 0], (len(g), 3, 3)))
    By = _assemble(mesh, w * np.broadcast_to(g[:, None, :, 1], (len(g), 3, 3)))
    return sparse.hstack([Bx, By], format='csr')


def pressure_stabilization(mesh, gamma):
    """``gamma * sum_K h_K^2 (grad p, grad q)_K``."""
    g = mesh.basis_gradients
    w = gamma * mesh.cell_diameters ** 2 * mesh.areas
    return _assemble(mesh, w[:, None, None] * np.einsum('tid,tjd->tij', g, g))


def pressure_mean(mesh):
    """Vector of integrals of the pressure basis functions."""
    m = np.zeros(mesh.n_vertices)
    np.add.at(m, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return m


def convection(mesh, rho_f, z):
    """
    Skew-symmetric convection ``(rho_f/2)((z.grad u, v) - (z.grad v, u))``.

    ``z`` is a component-blocked P1 velocity. The matrix is built from
    ``N0[i, j] = (z.grad theta_j, theta_i)`` and antisymmetrised, so
    ``v @ N @ v`` vanishes identically.
    """
    nv = mesh.n_vertices
    z = np.asarray(z).reshape(2, nv)
    zt = z[:, mesh.triangles]  # (2, nt, 3)
    # int theta_i z dx = sum_k M_ik z_k
    mz = mesh.areas[None, :, None] * np.einsum('ik,ctk->cti', P1_MASS_REF, zt)
    local = np.einsum('cti,tjc->tij', mz, mesh.basis_gradients)
    N0 = _assemble(mesh, local)
    return _vec(0.5 * rho_f * (N0 - N0.T))


# -- curve operators -----------------------------------------------------

def _periodic(curve, local):
    """Scatter (n_seg, 2, 2) local matrices over the periodic curve."""
    seg = curve.segments()
    rows = np.repeat(seg, 2, axis=1).ravel()
    cols = np.tile(seg, (1, 2)).ravel()
    n = curve.n_nodes
    return sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def curve_mass_scalar(curve):
    ds = curve.seg_lengths[:, None, None]
    return _periodic(curve, ds * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)


def curve_stiffness_scalar(curve):
    ds = curve.seg_lengths[:, None, None]
    return _periodic(curve, np.array([[1.0, -1.0], [-1.0, 1.0]]) / ds)


def solid_mass(curve, rho_s=1.0):
    return _vec(rho_s * curve_mass_scalar(curve))


def solid_stiffness(curve, kappa):
    """``kappa * int d_s d . d_s w ds`` on the closed curve."""
    return _vec(kappa * curve_stiffness_scalar(curve))


def multiplier_pairing(curve):
    """L2 pairing of multiplier and solid test functions on [0, 2*pi]."""
    return solid_mass(curve, 1.0)


def curve_dofs(positions):
    """(ns, 2) positions to a component-blocked vector."""
    return np.asarray(positions).reshape(-1, order='F')


def reference_tension_load(curve, kappa):
    """``l(w) = -a_s(X_ref, w)``: elastic force of the reference shape."""
    return -(solid_stiffness(curve, kappa) @ curve_dofs(curve.ref_positions))


def coupling_scalar(mesh, curve):
    """
    Scalar coupling ``C0[i, j] = int psi_i(s) theta_j(phi(s)) ds``.

    Each curve segment is cut at the fluid mesh edges and the product of
    the two affine factors is integrated exactly on every piece with the
    2-point Gauss rule in the curve parameter.
    """
    pos = curve.current_positions
    s = curve.params
    rows, cols, vals = [], [], []
    for k, (i0, i1) in enumerate(curve.segments()):
        sa, sb = s[k], s[k + 1]
        pieces = intersect_segment(mesh, pos[i0], pos[i1], (sa, sb))
        tri = np.array([p.host_triangle for p in pieces])
        ab = np.array([p.parent_params for p in pieces])  # (m, 2)
        sq = ab[:, :1] + GAUSS2_X[None, :] * (ab[:, 1:] - ab[:, :1])  # (m, 2)
        wq = GAUSS2_W[None, :] * (ab[:, 1:] - ab[:, :1])
        r = (sq - sa) / (sb - sa)
        xq = pos[i0] + r[..., None] * (pos[i1] - pos[i0])  # (m, 2, 2)
        lam = mesh.barycentric(np.repeat(tri, 2).reshape(-1, 2), xq)  # (m, 2, 3)
        psi = np.stack([1.0 - r, r], axis=-1)  # (m, 2, 2)
        local = np.einsum('mq,mqa,mqb->mab', wq, psi, lam)  # (m, 2 nodes, 3 verts)
        verts = mesh.triangles[tri]  # (m, 3)
        rows.append(np.broadcast_to(np.array([i0, i1])[None, :, None], local.shape).ravel())
        cols.append(np.broadcast_to(verts[:, None, :], local.shape).ravel())
        vals.append(local.ravel())
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(curve.n_nodes, mesh.n_vertices))


def coupling(mesh, curve):
    """Vector coupling ``c(mu, v o phi)``, shape (n_w, n_u)."""
    return _vec(coupling_scalar(mesh, curve))


def coupling_composite(mesh, curve, n_points=8):
    """
    Cross-check variant of ``coupling_scalar``: one ``n_points`` Gauss
    rule per curve segment, without intersecting the fluid mesh.
    Not exact when a segment crosses fluid element edges.
    """
    x, w = np.polynomial.legendre.leggauss(n_points)
    r = 0.5 * (x + 1.0)
    w = 0.5 * w
    pos = curve.current_positions
    seg = curve.segments()
    ds = curve.seg_lengths
    xq = pos[seg[:, 0], None, :] + r[None, :, None] * (pos[seg[:, 1]] - pos[seg[:, 0]])[:, None, :]
    tri, lam = locate_points(mesh, xq.reshape(-1, 2))
    lam = lam.reshape(len(seg), n_points, 3)
    verts = mesh.triangles[tri].reshape(len(seg), n_points, 3)
    psi = np.stack([1.0 - r, r], axis=-1)  # (q, 2)
    vals = np.einsum('s,q,qa,sqb->sqab', ds, w, psi, lam)
    rows = np.broadcast_to(seg[:, None, :, None], vals.shape)
    cols = np.broadcast_to(verts[:, :, None, :], vals.shape)
    return sparse.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(curve.n_nodes, mesh.n_vertices))


def velocity_boundary_dofs(mesh):
    b = mesh.boundary_vertices
    return np.concatenate([b, b + mesh.n_vertices])


def apply_dirichlet(A, dofs, rhs=None):
    """
    Replace the rows and columns of ``dofs`` by the identity.

    Homogeneous data only, so the right-hand side entries are zeroed and no
    column lifting is needed. Returns ``A`` (and ``rhs`` if given).
    """
    n = A.shape[0]
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sparse.diags(keep)
    out = (D @ A @ D + sparse.diags(1.0 - keep)).tocsr()
    out.eliminate_zeros()
    if rhs is None:
        return out
    rhs = np.array(rhs, dtype=float, copy=True)
    rhs[dofs] = 0.0
    return out, rhs
