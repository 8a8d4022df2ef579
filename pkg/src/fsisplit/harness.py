"""
Experiment drivers, checkpoints and CSV output.

``run_simulation`` advances one configuration and records an
``EnergyRecord`` per step. The drivers built on it (stability sweeps,
spatial and temporal convergence, control-point trajectories) only
combine runs; a blow-up or an escaped curve is an outcome of a run, not an
exception, so one failing cell never affects the others.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_hash, parse_config, to_ini
from .diagnostics import (EnergyRecord, ErrorTriple, augmented_terms, control_points,
                          convergence_rates, dissipation_increment,
                          energy_identity_residual, error_vs_reference, norm_L2_sigma,
                          total_energy)
from .geometry import GeometryError
from .linalg import SolverError
from .schemes import Discretization, State, Stepper, intermediate_velocity_residual

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "fsisplit-checkpoint"
CHECKPOINT_VERSION = 1
SOLVE_TOL = 1e-10
STATE_BLOCKS = ("u", "p", "lam", "d", "d_dot", "d_dot_half", "d_star")


class CheckpointError(ValueError):
    pass


def build_discretization(cfg):
    mesh = cfg.mesh.build()
    curve = cfg.curve.build(cfg.mesh.box)
    return Discretization(mesh, curve, cfg.physics)


def scheme_label(cfg):
    return cfg.scheme.label


# -- single runs ------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    initial: EnergyRecord
    records: list
    state: State
    outcome: str = "completed"
    message: str = ""
    flagged_steps: list = field(default_factory=list)

    @property
    def label(self):
        return self.config.scheme.label

    @property
    def tau(self):
        return self.config.scheme.tau

    @property
    def stable(self):
        return self.outcome == "completed"

    @property
    def E0(self):
        return self.initial.E

    def series(self, name, include_initial=False):
        recs = ([self.initial] if include_initial else []) + self.records
        return np.array([getattr(r, name) for r in recs])


def _record(state, disc, cfg, prev=None, D_cum=0.0):
    sc = cfg.scheme
    E = total_energy(state, disc, sc.preload)
    a, b = augmented_terms(state, disc, sc.tau, sc.preload)
    Ax, By = control_points(disc.curve, state.d)
    if prev is None:
        dinc, ident, inter = 0.0, 0.0, math.nan
    else:
        dinc = dissipation_increment(state, disc, sc.tau)
        ident = energy_identity_residual(prev, state, disc, sc)
        inter = math.nan
        if sc.scheme == "split":
            inter = (intermediate_velocity_residual(state, disc, sc)
                     / max(norm_L2_sigma(disc, state.d_dot), 1.0))
    D_cum += dinc
    # the Lyapunov function of the r = 1 splitting carries the two extra terms
    aug = E + D_cum + (a + b if (sc.scheme == "split" and sc.r == 1) else 0.0)
    return EnergyRecord(step=state.step_index, time=state.time, E=E, D_increment=dinc,
                        D_cumulative=D_cum, aug_velocity=a, aug_elastic=b, augmented=aug,
                        constraint_residual=state.constraint_residual,
                        identity_residual=ident, intermediate_residual=inter,
                        solve_residual=state.solve_residual, A_x=Ax, B_y=By)


def run_simulation(cfg, disc=None, state=None):
    """
    Advance ``cfg`` from ``state`` (zero data by default) to ``cfg.scheme.T``.

    Returns a ``RunResult`` whose ``outcome`` is ``completed``, ``blowup``
    (energy non-finite or above ``blowup_factor * E0``) or ``escaped`` (the
    curve left the fluid box). Solver failures raise ``SolverError``
    naming the step.
    """
    disc = build_discretization(cfg) if disc is None else disc
    sc = cfg.scheme
    state = disc.zero_state() if state is None else state
    stepper = Stepper(disc, sc)
    first = _record(state, disc, cfg)
    result = RunResult(cfg, first, [], state)
    E0, D = first.E, 0.0
    limit = cfg.experiment.blowup_factor * E0
    log.info("run %s tau=%g T=%g (%d steps)", sc.label, sc.tau, sc.T, sc.n_steps)
    for n in range(state.step_index, sc.n_steps):
        try:
            new = stepper.step(state)
        except GeometryError as exc:
            result.outcome, result.message = "escaped", f"step {n + 1}: {exc}"
            break
        except SolverError as exc:
            raise SolverError(f"step {n + 1} of {sc.label} (tau={sc.tau:g}): {exc}") from exc
        E = total_energy(new, disc, sc.preload)
        if not np.isfinite(E) or (E0 > 0 and E > limit):
            result.state = new
            result.outcome = "blowup"
            result.message = f"step {n + 1}: E = {E:.3e} (E0 = {E0:.3e})"
            break
        rec = _record(new, disc, cfg, state, D)
        D = rec.D_cumulative
        if rec.solve_residual > SOLVE_TOL:
            result.flagged_steps.append(new.step_index)
            log.warning("step %d: solve residual %.2e above %.0e", new.step_index,
                        rec.solve_residual, SOLVE_TOL)
        result.records.append(rec)
        state = new
        result.state = new
    if result.outcome != "completed":
        log.info("%s tau=%g: %s (%s)", sc.label, sc.tau, result.outcome, result.message)
    return result


# -- stability ---------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    scheme: str
    tau: float
    outcome: str
    stable: bool
    steps: int
    final_E_ratio: float
    max_aug_increase: float
    plateau_drop: float
    message: str = ""


def _plateau_drop(res, window=0.5):
    """Decrease of the monitored energy over the last ``window`` time units, over E0."""
    if not res.records or res.E0 <= 0:
        return math.nan
    t = res.series("time", True)
    A = res.series("augmented", True)
    k = int(np.searchsorted(t, t[-1] - window - 1e-12))
    return float((A[k] - A[-1]) / res.E0)


def summarize(res):
    E0 = res.E0
    A = res.series("augmented", True)
    inc = float(np.max(np.diff(A))) / E0 if len(A) > 1 and E0 > 0 else math.nan
    last = res.records[-1].E if res.records else E0
    return SweepRow(res.label, res.tau, res.outcome, res.stable, len(res.records),
                    last / E0 if E0 > 0 else math.nan, inc, _plateau_drop(res), res.message)


def stability_sweep(cfg, taus=None, labels=None, keep_runs=False):
    """Run every (scheme, tau) cell independently; returns rows (and runs)."""
    taus = cfg.experiment.taus if taus is None else taus
    labels = cfg.experiment.schemes if labels is None else labels
    if not taus:
        raise ConfigError("stability sweep needs a non-empty taus list")
    disc = build_discretization(cfg)
    rows, runs = [], []
    for label in labels:
        for tau in taus:
            c = cfg.with_label(label, tau=tau)
            try:
                res = run_simulation(c, disc)
            except SolverError as exc:
                rows.append(SweepRow(label, tau, "solver_failure", False, 0, math.nan,
                                     math.nan, math.nan, str(exc)))
                continue
            rows.append(summarize(res))
            if keep_runs:
                runs.append(res)
    return (rows, runs) if keep_runs else rows


@dataclass(frozen=True)
class BoundaryRow:
    n_seg: int
    h_s: float
    tau_stable: float
    tau_unstable: float

    @property
    def c(self):
        """``tau_stable / h_s^2``."""
        return self.tau_stable / self.h_s ** 2


def stability_boundary(cfg, label="explicit", n_segs=None, tau_range=None, bisections=None):
    """
    Largest stable time step per curve resolution.

    For each ``n_seg`` the time step is halved from ``tau_max`` until a run
    survives; the interval between that and the previous (unstable) step
    is then bisected geometrically. Each probe runs to ``T`` but for at
    least ``boundary_min_steps`` steps, so that growth has time to show at
    large steps. A row with ``tau_unstable = nan`` means even ``tau_max``
    was stable; one with ``tau_stable = nan`` means nothing down to
    ``tau_min`` was.
    """
    e = cfg.experiment
    n_segs = e.boundary_n_seg if n_segs is None else n_segs
    tau_min, tau_max = e.boundary_tau_range if tau_range is None else tau_range
    bisections = e.boundary_bisections if bisections is None else bisections
    rows = []
    for n_seg in n_segs:
        c = replace(cfg, curve=replace(cfg.curve, n_seg=int(n_seg)))
        disc = build_discretization(c)

        def stable(tau):
            T = max(cfg.scheme.T, e.boundary_min_steps * tau)
            try:
                return run_simulation(c.with_label(label, tau=tau, T=T), disc).stable
            except SolverError:
                return False

        hi, lo = math.nan, tau_max
        while lo >= tau_min and not stable(lo):
            hi, lo = lo, lo / 2
        if lo < tau_min:
            lo = math.nan
        elif not math.isnan(hi):
            for _ in range(bisections):
                mid = math.sqrt(lo * hi)
                if stable(mid):
                    lo = mid
                else:
                    hi = mid
        rows.append(BoundaryRow(int(n_seg), disc.curve.mesh_size, lo, hi))
    return rows


def boundary_scaling(rows):
    """Least-squares exponent p of ``tau_stable ~ h_s^p``."""
    h = np.array([r.h_s for r in rows])
    t = np.array([r.tau_stable for r in rows])
    ok = np.isfinite(t)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(t[ok]), 1)[0])


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    config: RunConfig
    state: State
    config_hash: str


def _sanitize(cfg):
    return replace(cfg, reference=replace(cfg.reference, path=""),
                   output=replace(cfg.output, directory="out"))


def save_checkpoint(path, state, cfg):
    """
    Write a text checkpoint.

    Layout: a magic/version line, the canonical config text, a ``[state]``
    block with time, step and config hash, a ``%%`` separator, then for
    each stored vector a ``name length`` line followed by one ``%.17g``
    value per line. ``%.17g`` round-trips every double exactly.
    """
    cfg = _sanitize(cfg)
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", to_ini(cfg).rstrip(), "",
             "[state]", f"time = {state.time!r}", f"step = {state.step_index}",
             f"config_hash = {config_hash(cfg)}", "%%"]
    for name in STATE_BLOCKS:
        v = getattr(state, name)
        if v is None:
            continue
        lines.append(f"{name} {len(v)}")
        lines.extend("%.17g" % x for x in v)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _same_discretization(a, b):
    return a.mesh == b.mesh and a.curve == b.curve and a.physics == b.physics


def load_checkpoint(path, expect=None):
    """
    Read a checkpoint written by ``save_checkpoint``.

    With ``expect`` (a ``RunConfig``) the stored mesh, curve and physics
    must match it. Raises ``CheckpointError`` on a missing file, a version
    mismatch or vectors whose lengths disagree with the stored config.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    if head[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"checkpoint version {head[1]} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    try:
        sep = lines.index("%%")
        st = lines.index("[state]")
    except ValueError as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    try:
        cfg = parse_config("\n".join(lines[1:st]))
    except ConfigError as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc
    meta = dict(l.split(" = ", 1) for l in lines[st + 1:sep] if " = " in l)
    blocks, k = {}, sep + 1
    while k < len(lines) and lines[k]:
        head = lines[k].split()
        if len(head) != 2 or head[0] not in STATE_BLOCKS or not head[1].isdigit():
            raise CheckpointError(f"line {k + 1}: expected a block header, got {lines[k]!r} "
                                  "(block length mismatch?)")
        name, n = head[0], int(head[1])
        vals = lines[k + 1:k + 1 + n]
        if len(vals) != n:
            raise CheckpointError(f"block {name}: expected {n} values, found {len(vals)}")
        try:
            blocks[name] = np.array([float(x) for x in vals])
        except ValueError as exc:
            raise CheckpointError(f"block {name}: {exc} (block length mismatch?)") from exc
        k += n + 1
    nv = (cfg.mesh.nx + 1) * (cfg.mesh.ny + 1)
    want = {"u": 2 * nv, "p": nv, "lam": 2 * cfg.curve.n_seg}
    for name in STATE_BLOCKS:
        n = want.get(name, 2 * cfg.curve.n_seg)
        if name in blocks and len(blocks[name]) != n:
            raise CheckpointError(f"block {name} has length {len(blocks[name])}, expected {n}")
        if name in ("u", "p", "lam", "d", "d_dot") and name not in blocks:
            raise CheckpointError(f"block {name} missing")
    if expect is not None and not _same_discretization(cfg, expect):
        raise CheckpointError("checkpoint was written for a different mesh, curve or physics")
    state = State(blocks["u"], blocks["p"], blocks["lam"], blocks["d"], blocks["d_dot"],
                  d_dot_half=blocks.get("d_dot_half"), d_star=blocks.get("d_star"),
                  time=float(meta.get("time", 0.0)), step_index=int(meta.get("step", 0)))
    return Checkpoint(cfg, state, meta.get("config_hash", ""))


# -- references and convergence --------------------------------------------------

def level_config(cfg, nx):
    """Config of one spatial level: ``nx * nx`` cells, ``seg_per_cell * nx`` segments."""
    e = cfg.experiment
    return replace(cfg, mesh=replace(cfg.mesh, nx=int(nx), ny=int(nx)),
                   curve=replace(cfg.curve, n_seg=int(e.seg_per_cell * nx)))


def spatial_reference_config(cfg):
    r = cfg.reference
    c = level_config(cfg, r.nx)
    return c.with_label("strong", tau=r.tau or cfg.scheme.tau, linearized=r.linearized,
                        frozen_geometry=r.frozen_geometry)


def temporal_reference_config(cfg, label):
    r = cfg.reference
    if not r.tau > 0:
        raise ConfigError("temporal convergence needs [reference] tau > 0")
    return cfg.with_label(label, tau=r.tau)


def obtain_reference(ref_cfg, path=None):
    """
    Load the reference stored at ``path`` or compute it (and store it).

    A stored reference is only reused if it was produced by exactly
    ``ref_cfg``; otherwise ``CheckpointError`` is raised.
    """
    if path is not None and Path(path).is_file():
        ck = load_checkpoint(path, expect=ref_cfg)
        if ck.config_hash != config_hash(_sanitize(ref_cfg)):
            raise CheckpointError(f"{path} was generated with a different configuration")
        return build_discretization(ck.config), ck.state
    disc = build_discretization(ref_cfg)
    res = run_simulation(ref_cfg, disc)
    if not res.stable:
        raise SolverError(f"reference run did not complete: {res.outcome} {res.message}")
    if path is not None:
        save_checkpoint(path, res.state, ref_cfg)
    return disc, res.state


@dataclass
class ConvergenceTable:
    scheme: str
    parameter: str  # "h" or "tau"
    values: list
    errors: list  # ErrorTriple per level
    outcomes: list

    def column(self, k):
        return np.array([e.as_tuple()[k] for e in self.errors])

    def rates(self, k):
        return convergence_rates(self.column(k))

    def rows(self):
        """Table rows: value, then (error, rate) per norm; rate of level 0 is nan."""
        rates = [np.concatenate([[math.nan], self.rates(k)]) for k in range(3)]
        out = []
        for i, v in enumerate(self.values):
            row = [self.scheme, v]
            for k in range(3):
                row += [self.errors[i].as_tuple()[k], rates[k][i]]
            out.append(row)
        return out


NAN_TRIPLE = ErrorTriple(math.nan, math.nan, math.nan)


def spatial_convergence(cfg, reference_path=None, labels=None, collect=None):
    """
    Errors at the final time for every ``nx`` in ``experiment.nx_list``
    against one strong-scheme reference on the finer ``reference.nx`` mesh.

    Every ``RunResult`` is appended to the list ``collect`` if one is given.
    """
    e = cfg.experiment
    labels = e.schemes if labels is None else labels
    ref_disc, ref_state = obtain_reference(spatial_reference_config(cfg), reference_path)
    tables = []
    for label in labels:
        errs, outs = [], []
        for nx in e.nx_list:
            c = level_config(cfg, nx).with_label(label)
            disc = build_discretization(c)
            res = run_simulation(c, disc)
            if collect is not None:
                collect.append(res)
            outs.append(res.outcome)
            errs.append(error_vs_reference(disc, res.state, ref_disc, ref_state)
                        if res.stable else NAN_TRIPLE)
        tables.append(ConvergenceTable(label, "h", [1.0 / nx for nx in e.nx_list], errs, outs))
    return tables


def temporal_convergence(cfg, reference_dir=None, labels=None, collect=None):
    """
    Errors at ``T`` for every tau against a per-scheme small-tau reference.

    Every run, references included, is appended to ``collect`` if given.
    """
    e = cfg.experiment
    labels = e.schemes if labels is None else labels
    for tau in e.taus:
        if abs(round(cfg.scheme.T / tau) * tau - cfg.scheme.T) > 1e-9 * cfg.scheme.T:
            raise ConfigError(f"T = {cfg.scheme.T} is not a multiple of tau = {tau}")
    disc = build_discretization(cfg)
    tables = []
    for label in labels:
        rc = temporal_reference_config(cfg, label)
        path = None if reference_dir is None else Path(reference_dir) / f"temporal_reference_{label}.chk"
        if path is not None and path.is_file():
            _, ref_state = obtain_reference(rc, path)
        else:
            res = run_simulation(rc, disc)
            if collect is not None:
                collect.append(res)
            if not res.stable:
                raise SolverError(f"reference run {label} did not complete: {res.message}")
            ref_state = res.state
            if path is not None:
                save_checkpoint(path, ref_state, rc)
        errs, outs = [], []
        for tau in e.taus:
            res = run_simulation(cfg.with_label(label, tau=tau), disc)
            if collect is not None:
                collect.append(res)
            outs.append(res.outcome)
            errs.append(error_vs_reference(disc, res.state, disc, ref_state)
                        if res.stable else NAN_TRIPLE)
        tables.append(ConvergenceTable(label, "tau", list(e.taus), errs, outs))
    return tables


def trajectory_run(cfg, taus=None, labels=None):
    """Control-point series for every (scheme, tau); returns ``RunResult`` objects."""
    taus = cfg.experiment.taus if taus is None else taus
    labels = cfg.experiment.schemes if labels is None else labels
    disc = build_discretization(cfg)
    runs = []
    for label in labels:
        for tau in taus:
            try:
                runs.append(run_simulation(cfg.with_label(label, tau=tau), disc))
            except SolverError as exc:
                log.error("%s tau=%g: %s", label, tau, exc)
    return runs


def trajectory_gap(run, ref):
    """L-infinity distance between the A_x series of two runs with the same tau."""
    a = run.series("A_x", True)
    b = ref.series("A_x", True)
    n = min(len(a), len(b))
    return float(np.max(np.abs(a[:n] - b[:n])))


# -- CSV ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, cfg, columns, rows, extra=None):
    """
    CSV with a ``#`` comment block (config hash, gamma, mesh, horizon)
    followed by a header row and the data rows.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config_hash(_sanitize(cfg)), "gamma": cfg.physics.gamma,
            "mesh": f"{cfg.mesh.nx}x{cfg.mesh.ny}", "n_seg": cfg.curve.n_seg,
            "T": cfg.scheme.T}
    meta.update(extra or {})
    with path.open("w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={_fmt(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


ENERGY_COLUMNS = list(EnergyRecord.__dataclass_fields__)


def write_energy_csv(path, res):
    rows = [[getattr(r, c) for c in ENERGY_COLUMNS] for r in res.records]
    return write_csv(path, res.config, ENERGY_COLUMNS, rows,
                     {"scheme": res.label, "tau": res.tau, "E0": res.E0,
                      "outcome": res.outcome})


def write_trajectory_csv(path, cfg, runs):
    rows = []
    for res in runs:
        for r in [res.initial] + res.records:
            rows.append([res.label, res.tau, r.step, r.time, r.A_x, r.B_y])
    return write_csv(path, cfg, ["scheme", "tau", "step", "time", "A_x", "B_y"], rows)


def write_sweep_csv(path, cfg, rows):
    cols = list(SweepRow.__dataclass_fields__)
    return write_csv(path, cfg, cols, [[getattr(r, c) for c in cols] for r in rows])


def write_boundary_csv(path, cfg, rows):
    cols = ["n_seg", "h_s", "tau_stable", "tau_unstable", "c"]
    return write_csv(path, cfg, cols, [[r.n_seg, r.h_s, r.tau_stable, r.tau_unstable, r.c]
                                       for r in rows],
                     {"scaling_exponent": boundary_scaling(rows)})


def write_convergence_csv(path, cfg, tables):
    p = tables[0].parameter if tables else "h"
    cols = ["scheme", p, "err_u_L2", "rate_u", "err_ddot_L2", "rate_ddot", "err_d_s", "rate_d_s"]
    rows = [row for t in tables for row in t.rows()]
    e, r = cfg.experiment, cfg.reference
    if p == "h":
        extra = {"nx_list": " ".join(map(str, e.nx_list)), "seg_per_cell": e.seg_per_cell,
                 "tau": cfg.scheme.tau, "reference_nx": r.nx}
    else:
        extra = {"reference_tau": r.tau}
    return write_csv(path, cfg, cols, rows, extra)
