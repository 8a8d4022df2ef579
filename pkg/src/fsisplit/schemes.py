"""
Time stepping for the fluid / immersed string system.

Three schemes share one fluid step. The unknowns of that step are the
velocity, the pressure (plus a scalar enforcing zero mean), the multiplier
and a solid velocity; the schemes differ only in how the elastic force
enters the solid row and in what happens afterwards:

``strong``
    elastic force implicit, the solid velocity is the end-of-step one and
    the displacement follows from ``d = d_prev + tau * d_dot``.
``explicit``
    elastic force evaluated at ``d_prev``; same displacement update. The
    solid solver is never called.
``split``
    elastic force evaluated at an extrapolated displacement; the solid
    velocity of the fluid step is only intermediate. A second, purely
    solid solve driven by the multiplier then yields ``d`` and ``d_dot``.

The coupling is always assembled on the interface of the previous step and
convection is linearised around the previous velocity, so every step is a
single linear solve.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from . import assembly as asm
from .linalg import compose, factorize

SCHEMES = ("strong", "explicit", "split")


class ContractError(ValueError):
    """An operation was applied to a state it is not defined for."""


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "strong"
    r: int = 1
    tau: float = 0.01
    T: float = 1.0
    linearized: bool = False
    frozen_geometry: bool = False
    preload: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.r not in (1, 2):
            raise ValueError("extrapolation order r must be 1 or 2")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.T < self.tau * (1 - 1e-12):
            raise ValueError("horizon T must be at least one step")

    @property
    def n_steps(self):
        return int(round(self.T / self.tau))

    @property
    def label(self):
        return f"split_r{self.r}" if self.scheme == "split" else self.scheme


@dataclass
class State:
    u: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    d_dot_half: np.ndarray = None
    time: float = 0.0
    step_index: int = 0
    # per-step by-products kept for diagnostics
    d_star: np.ndarray = None
    solve_residual: float = 0.0
    constraint_residual: float = 0.0

    def copy(self):
        def c(a):
            return None if a is None else a.copy()
        return replace(self, u=c(self.u), p=c(self.p), lam=c(self.lam), d=c(self.d),
                       d_dot=c(self.d_dot), d_dot_half=c(self.d_dot_half),
                       d_star=c(self.d_star))


class Discretization:
    """
    Time-independent operators of one mesh / curve / physics combination.

    Mass matrices are stored density free (``Mf``, ``Ms``); ``Kf`` is the
    viscous stiffness including ``mu`` and ``Ks`` the string stiffness
    including ``kappa``.
    """

    def __init__(self, mesh, curve, params):
        self.mesh = mesh
        self.curve = curve
        self.params = params
        self.dofs = asm.DofMap(mesh.n_vertices, curve.n_nodes)
        self.Mf = asm.fluid_mass(mesh, 1.0)
        self.Kf = asm.viscous_stiffness(mesh, params.mu)
        self.B = asm.divergence(mesh)
        self.S = asm.pressure_stabilization(mesh, params.gamma)
        self.mean = asm.pressure_mean(mesh)
        self.Ms = asm.solid_mass(curve, 1.0)
        self.Ks = asm.solid_stiffness(curve, params.kappa)
        self.x_ref = asm.curve_dofs(curve.ref_positions)
        self.boundary = asm.velocity_boundary_dofs(mesh)
        self._ms_lu = spla.splu(sparse.csc_matrix(self.Ms))

    def zero_state(self):
        n = self.dofs
        return State(np.zeros(n.n_u), np.zeros(n.n_p), np.zeros(n.n_w),
                     np.zeros(n.n_w), np.zeros(n.n_w))

    def position(self, d, preload=True):
        """Argument of the elastic form: ``X_ref + d`` with preload, else ``d``."""
        return self.x_ref + d if preload else d

    def coupling_at(self, d):
        return asm.coupling(self.mesh, self.curve.with_displacement(d))

    def apply_L(self, w):
        """Discrete elastic operator ``Ms^{-1} Ks w``."""
        return apply_discrete_elastic(self, w)


def apply_discrete_elastic(disc, w):
    w = np.asarray(w, dtype=float)
    return disc._ms_lu.solve(disc.Ks @ w)


def extrapolate_displacement(state, r, tau):
    if r == 1:
        return state.d.copy()
    if r == 2:
        return state.d + tau * state.d_dot
    raise ValueError("extrapolation order r must be 1 or 2")


def _coupling(state, disc, cfg, cache):
    if cfg.frozen_geometry:
        if "C" not in cache:
            cache["C"] = disc.coupling_at(state.d)
        return cache["C"]
    return disc.coupling_at(state.d)


def _fluid_step(state, disc, cfg, cache, implicit_elastic, d_force):
    """
    Solve the coupled fluid / multiplier / solid-velocity system.

    Returns (u, p, lam, w, relative solve residual, constraint residual)
    where ``w`` is the solid velocity of the step.
    """
    prm, tau = disc.params, cfg.tau
    dm = disc.dofs
    C = _coupling(state, disc, cfg, cache)
    key = ("fluid", implicit_elastic)
    reuse = cfg.linearized and cfg.frozen_geometry
    F = cache.get(key) if reuse else None
    if F is None:
        A = prm.rho_f / tau * disc.Mf + disc.Kf
        if not cfg.linearized:
            A = A + asm.convection(disc.mesh, prm.rho_f, state.u)
        W = prm.rho_s / tau * disc.Ms
        if implicit_elastic:
            W = W + tau * disc.Ks
        names = ["velocity", "pressure", "mean", "multiplier", "solid"]
        sizes = [dm.sizes[n] for n in names]
        m = sparse.csr_matrix(disc.mean[:, None])
        blocks = {
            ("velocity", "velocity"): A,
            ("velocity", "pressure"): (disc.B, "-T"),
            ("velocity", "multiplier"): (C, "T"),
            ("pressure", "velocity"): disc.B,
            ("pressure", "pressure"): disc.S,
            ("pressure", "mean"): m,
            ("mean", "pressure"): (m, "T"),
            ("multiplier", "velocity"): C,
            ("multiplier", "solid"): (disc.Ms, "-"),
            ("solid", "multiplier"): (disc.Ms, "-"),
            ("solid", "solid"): W,
        }
        system = compose(names, sizes, blocks)
        system.matrix = asm.apply_dirichlet(system.matrix, disc.boundary)
        F = factorize(system.matrix, system)
        if reuse:
            cache[key] = F
    rhs = np.zeros(dm.size)
    rhs[dm.slice("velocity")] = prm.rho_f / tau * (disc.Mf @ state.u)
    rhs[dm.slice("velocity")][disc.boundary] = 0.0
    rhs[dm.slice("solid")] = (prm.rho_s / tau * (disc.Ms @ state.d_dot)
                              - disc.Ks @ disc.position(d_force, cfg.preload))
    x = F.solve(rhs)
    res = F.residual(x, rhs)
    parts = F.system.split(x)
    u, w = parts["velocity"], parts["solid"]
    cu, cw = C @ u, disc.Ms @ w
    scale = np.linalg.norm(cu) + np.linalg.norm(cw)
    cres = np.linalg.norm(cu - cw) / scale if scale > 0 else 0.0
    return u, parts["pressure"].copy(), parts["multiplier"].copy(), w.copy(), res, cres


def _finish(state, disc, cfg, u, p, lam, d, d_dot, **extra):
    new = State(u=u, p=p, lam=lam, d=d, d_dot=d_dot,
                time=(state.step_index + 1) * cfg.tau,
                step_index=state.step_index + 1, **extra)
    if not cfg.frozen_geometry:
        disc.curve.with_displacement(d).check_inside(disc.mesh)
    return new


def step_strong(state, disc, cfg, cache=None):
    """One step of the monolithic scheme (backward Euler, implicit elasticity)."""
    cache = {} if cache is None else cache
    u, p, lam, w, res, cres = _fluid_step(state, disc, cfg, cache, True, state.d)
    d = state.d + cfg.tau * w
    return _finish(state, disc, cfg, u, p, lam, d, w,
                   solve_residual=res, constraint_residual=cres)


def step_explicit(state, disc, cfg, cache=None):
    """One step of the scheme with fully explicit elasticity."""
    cache = {} if cache is None else cache
    u, p, lam, w, res, cres = _fluid_step(state, disc, cfg, cache, False, state.d)
    d = state.d + cfg.tau * w
    return _finish(state, disc, cfg, u, p, lam, d, w,
                   solve_residual=res, constraint_residual=cres)


def _solid_factor(disc, cfg, cache):
    key = ("solid", cfg.tau)
    if key not in cache:
        A = disc.params.rho_s / cfg.tau ** 2 * disc.Ms + disc.Ks
        cache[key] = factorize(A)
    return cache[key]


def step_split(state, disc, cfg, cache=None, r=None):
    """
    One step of the splitting scheme with extrapolation order ``r``.

    Step 1 is the fluid step with the elastic force at the extrapolated
    displacement; it yields the multiplier and the intermediate solid
    velocity. Step 2 is the solid solve
    ``(rho_s/tau^2 Ms + Ks) d = Ms lam + rho_s/tau Ms (d_dot_prev + d_prev/tau) - Ks X_ref``.
    """
    cache = {} if cache is None else cache
    r = cfg.r if r is None else r
    prm, tau = disc.params, cfg.tau
    d_star = extrapolate_displacement(state, r, tau)
    u, p, lam, w_half, res, cres = _fluid_step(state, disc, cfg, cache, False, d_star)

    F = _solid_factor(disc, cfg, cache)
    rhs = (disc.Ms @ lam
           + prm.rho_s / tau * (disc.Ms @ (state.d_dot + state.d / tau)))
    if cfg.preload:
        rhs -= disc.Ks @ disc.x_ref
    d = F.solve(rhs)
    d_dot = (d - state.d) / tau
    return _finish(state, disc, cfg, u, p, lam, d, d_dot, d_dot_half=w_half,
                   d_star=d_star, solve_residual=max(res, F.residual(d, rhs)),
                   constraint_residual=cres)


def step(state, disc, cfg, cache=None):
    if cfg.scheme == "strong":
        return step_strong(state, disc, cfg, cache)
    if cfg.scheme == "explicit":
        return step_explicit(state, disc, cfg, cache)
    return step_split(state, disc, cfg, cache)


@dataclass
class Stepper:
    """Advances a state with one scheme, keeping reusable factorizations."""

    disc: Discretization
    cfg: SchemeConfig
    cache: dict = field(default_factory=dict)

    def step(self, state):
        return step(state, self.disc, self.cfg, self.cache)


def intermediate_velocity_residual(state, disc, cfg):
    """
    ``|| d_dot_half - d_dot - tau/rho_s L_h (d - d_star) ||`` in L2 on the
    curve, for a state produced by ``step_split``.
    """
    if state.d_star is None or state.d_dot_half is None:
        raise ContractError("intermediate velocity residual needs a split-scheme state")
    e = (state.d_dot_half - state.d_dot
         - cfg.tau / disc.params.rho_s * apply_discrete_elastic(disc, state.d - state.d_star))
    return float(np.sqrt(max(e @ (disc.Ms @ e), 0.0)))


@dataclass(frozen=True)
class CFLReport:
    tau: float
    h_s: float
    extrapolation_bound: float
    cubic_margin: float
    parabolic_bound: float

    @property
    def extrapolation_ok(self):
        """Both conditions for the second-order extrapolation."""
        return self.tau <= self.extrapolation_bound and self.cubic_margin < 1.0

    @property
    def parabolic_ok(self):
        return self.tau <= self.parabolic_bound


def cfl_bounds(params, h_s, tau, alpha, C_I, beta_s):
    """
    Advisory time-step bounds.

    ``extrapolation_bound = alpha (rho_s/C_I)^(2/3) h_s^(4/3)`` together with
    ``2 tau alpha^3 < 1`` for the split scheme with ``r = 2``, and
    ``parabolic_bound = rho_s / (C_I beta_s) h_s^2`` for the explicit scheme.
    The constants are inputs; nothing here stops a run.
    """
    rho = params.rho_s
    return CFLReport(
        tau=tau, h_s=h_s,
        extrapolation_bound=alpha * (rho / C_I) ** (2.0 / 3.0) * h_s ** (4.0 / 3.0),
        cubic_margin=2.0 * tau * alpha ** 3,
        parabolic_bound=rho / (C_I * beta_s) * h_s ** 2,
    )


def estimate_inverse_constant(curve, kappa):
    """
    ``C_I = h_s^2 * lambda_max(Ks, Ms)``, the smallest constant with
    ``||L_h w||_s <= C_I h_s^-2 ||w||_s`` on the given curve mesh.
    """
    K = kappa * asm.curve_stiffness_scalar(curve).toarray()
    M = asm.curve_mass_scalar(curve).toarray()
    lam = sla.eigh(K, M, eigvals_only=True)
    return float(lam.max() * curve.mesh_size ** 2)
