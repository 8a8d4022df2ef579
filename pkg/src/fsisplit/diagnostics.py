"""
Monitored quantities: energies, dissipation, norms, point evaluation,
control points and errors against reference solutions.

Energies use full squares, ``E = rho_f |u|^2 + rho_s |d_dot|^2 + |X|_s^2``,
with ``X = X_ref + d`` when the reference tension load is on and ``X = d``
otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, locate_points
from .schemes import apply_discrete_elastic


class NestingError(ValueError):
    """Two discretizations are not nested refinements of each other."""


@dataclass
class EnergyRecord:
    step: int
    time: float
    E: float
    D_increment: float
    D_cumulative: float
    aug_velocity: float
    aug_elastic: float
    augmented: float
    constraint_residual: float
    identity_residual: float
    intermediate_residual: float
    solve_residual: float
    A_x: float
    B_y: float


@dataclass(frozen=True)
class ErrorTriple:
    err_u_L2: float
    err_ddot_L2: float
    err_d_s: float

    def as_tuple(self):
        return (self.err_u_L2, self.err_ddot_L2, self.err_d_s)


def _sqrt_form(A, x):
    return float(np.sqrt(max(float(x @ (A @ x)), 0.0)))


def norm_s(disc, d):
    """``sqrt(a_s(d, d))``."""
    return _sqrt_form(disc.Ks, d)


def norm_L2_sigma(disc, w):
    return _sqrt_form(disc.Ms, w)


def norm_L2_omega(disc, u):
    return _sqrt_form(disc.Mf, u)


def seminorm_sh(disc, p):
    return _sqrt_form(disc.S, p)


def elastic_argument(disc, d, preload):
    return disc.position(d, preload)


def total_energy(state, disc, preload=True):
    prm = disc.params
    X = disc.position(state.d, preload)
    return float(prm.rho_f * (state.u @ (disc.Mf @ state.u))
                 + prm.rho_s * (state.d_dot @ (disc.Ms @ state.d_dot))
                 + X @ (disc.Ks @ X))


def dissipation_increment(state, disc, tau):
    """``tau (4 mu |eps(u)|^2 + 2 |p|_sh^2)``; ``Kf`` already carries ``2 mu``."""
    return float(tau * (2.0 * (state.u @ (disc.Kf @ state.u))
                        + 2.0 * (state.p @ (disc.S @ state.p))))


def augmented_terms(state, disc, tau, preload=True):
    """
    ``(tau^2 |d_dot|_s^2, tau^2/rho_s |L_h X|^2_{0,Sigma})``.

    These are the extra terms that make the energy of the splitting scheme
    with ``r = 1`` a Lyapunov function in the full-square convention.
    """
    X = disc.position(state.d, preload)
    LX = apply_discrete_elastic(disc, X)
    a = tau ** 2 * float(state.d_dot @ (disc.Ks @ state.d_dot))
    b = tau ** 2 / disc.params.rho_s * float(LX @ (disc.Ms @ LX))
    return a, b


def energy_identity_terms(prev, cur, disc, cfg):
    """
    Terms of the one-step energy balance (full-square convention).

    Returns a dict whose values sum to zero up to round-off:
    energy change, dissipation, numerical dissipation of the fluid and
    solid inertia, the elastic increment term and, for the splitting
    scheme, the two coupling terms coming from the intermediate velocity.
    """
    prm, tau = disc.params, cfg.tau
    du = cur.u - prev.u
    dv = cur.d_dot - prev.d_dot
    Xn = disc.position(cur.d, cfg.preload)
    Xo = disc.position(prev.d, cfg.preload)
    dX = Xn - Xo
    sign = -1.0 if cfg.scheme == "explicit" else 1.0
    t = {
        "energy_change": total_energy(cur, disc, cfg.preload) - total_energy(prev, disc, cfg.preload),
        "dissipation": dissipation_increment(cur, disc, tau),
        "fluid_inertia": prm.rho_f * float(du @ (disc.Mf @ du)),
        "solid_inertia": prm.rho_s * float(dv @ (disc.Ms @ dv)),
        "elastic_increment": sign * float(dX @ (disc.Ks @ dX)),
        "T1": 0.0,
        "T2": 0.0,
    }
    if cfg.scheme == "split":
        L = apply_discrete_elastic(disc, cur.d - cur.d_star)
        t["T1"] = 2.0 * tau * float(dv @ (disc.Ms @ L))
        t["T2"] = 2.0 * tau ** 2 / prm.rho_s * float(Xn @ (disc.Ks @ L))
    return t


def energy_identity_residual(prev, cur, disc, cfg):
    """Relative residual of the one-step energy balance."""
    t = energy_identity_terms(prev, cur, disc, cfg)
    scale = max(total_energy(prev, disc, cfg.preload), total_energy(cur, disc, cfg.preload),
                max(abs(v) for v in t.values()))
    total = sum(t.values())
    return abs(total) / scale if scale > 0 else abs(total)


# -- point evaluation ------------------------------------------------------

def evaluate_velocity(mesh, u, x):
    """
    P1 velocity at points ``x`` (shape (2,) or (m, 2)).

    Raises ``GeometryError`` for points outside the box.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    tri, lam = locate_points(mesh, x.reshape(-1, 2))
    nv = mesh.n_vertices
    u = np.asarray(u).reshape(2, nv)
    verts = mesh.triangles[tri]
    out = np.einsum('mk,cmk->mc', lam, u[:, verts])
    return out[0] if single else out


def evaluate_solid(curve, w, s):
    """
    P1 curve field ``w`` (component blocked) at parameters ``s``.

    Parameters are taken modulo the period of the curve.
    """
    s = np.asarray(s, dtype=float)
    single = s.ndim == 0
    s = np.atleast_1d(s)
    if not np.all(np.isfinite(s)):
        raise GeometryError("non-finite curve parameter")
    s0, period = curve.params[0], curve.params[-1] - curve.params[0]
    s = s0 + np.mod(s - s0, period)
    k = np.clip(np.searchsorted(curve.params, s, side='right') - 1, 0, curve.n_nodes - 1)
    r = (s - curve.params[k]) / (curve.params[k + 1] - curve.params[k])
    n = curve.n_nodes
    W = np.asarray(w).reshape(2, n).T
    out = (1.0 - r)[:, None] * W[k] + r[:, None] * W[(k + 1) % n]
    return out[0] if single else out


def control_points(curve, d):
    """
    ``(A_x, B_y)``: abscissa of the curve point at ``s = 0`` and ordinate
    of the point at ``s = pi/2`` in the current configuration.
    """
    x = curve.ref_positions.reshape(-1, order='F') + d
    A = evaluate_solid(curve, x, curve.params[0])
    B = evaluate_solid(curve, x, curve.params[0] + 0.5 * np.pi)
    return float(A[0]), float(B[1])


# -- errors against a reference ----------------------------------------------

def _refinement_ratio(n_coarse, n_fine, what):
    if n_fine % n_coarse:
        raise NestingError(f"{what}: {n_fine} is not a multiple of {n_coarse}")
    q = n_fine // n_coarse
    if q & (q - 1):
        raise NestingError(f"{what}: refinement ratio {q} is not a power of 2")
    return q


def check_nested(coarse, fine):
    """Raise ``NestingError`` unless ``fine`` refines ``coarse`` by powers of 2."""
    mc, mf = coarse.mesh, fine.mesh
    if not np.allclose(mc.box, mf.box, rtol=0, atol=1e-14):
        raise NestingError("fluid boxes differ")
    _refinement_ratio(mc.nx, mf.nx, "nx")
    _refinement_ratio(mc.ny, mf.ny, "ny")
    _refinement_ratio(coarse.curve.n_nodes, fine.curve.n_nodes, "curve segments")
    # nested curve nodes must coincide in parameter and reference position
    q = fine.curve.n_nodes // coarse.curve.n_nodes
    if not (np.allclose(fine.curve.params[::q], coarse.curve.params, atol=1e-12)
            and np.allclose(fine.curve.ref_positions[::q], coarse.curve.ref_positions, atol=1e-12)):
        raise NestingError("curve reference configurations are not nested")


def prolong_velocity(coarse_mesh, u, fine_mesh):
    """Coarse P1 velocity interpolated at the fine vertices (exact when nested)."""
    vals = evaluate_velocity(coarse_mesh, u, fine_mesh.vertices)
    return vals.reshape(-1, order='F')


def prolong_solid(coarse_curve, w, fine_curve):
    return evaluate_solid(coarse_curve, w, fine_curve.params[:-1]).reshape(-1, order='F')


def error_vs_reference(coarse, coarse_state, fine, fine_state):
    """
    Errors of a coarse solution against a reference on a nested discretization.

    ``coarse`` and ``fine`` are ``Discretization`` objects. Both fields are
    compared on the finer mesh and curve, where the coarse P1 functions
    are represented exactly, using the fine mass and stiffness matrices.
    """
    check_nested(coarse, fine)
    u = prolong_velocity(coarse.mesh, coarse_state.u, fine.mesh)
    v = prolong_solid(coarse.curve, coarse_state.d_dot, fine.curve)
    d = prolong_solid(coarse.curve, coarse_state.d, fine.curve)
    return ErrorTriple(norm_L2_omega(fine, u - fine_state.u),
                       norm_L2_sigma(fine, v - fine_state.d_dot),
                       norm_s(fine, d - fine_state.d))


def convergence_rates(errors):
    """
    ``log2(e[k-1] / e[k])`` for successive halvings; ``nan`` where a rate
    is undefined (a zero or non-finite error).
    """
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise ValueError("need at least two refinement levels")
    with np.errstate(divide='ignore', invalid='ignore'):
        r = np.log2(e[:-1] / e[1:])
    ok = (e[:-1] > 0) & (e[1:] > 0) & np.isfinite(e[:-1]) & np.isfinite(e[1:])
    return np.where(ok, r, np.nan)
