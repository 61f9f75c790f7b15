"""Greedy offline training of the reduced model.

Each iteration solves the reduced model over the training directions, picks
the worst-resolved time (for ``rho``) and time/direction pair (for ``g``)
by the L1 indicator, grows the reduced quadrature when a new direction is
picked, reruns the full model on the reduced quadrature and rebuilds both
bases from the sampled snapshots.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .angular import AngularQuadrature, lebedev, nonneg_reduced_quadrature
from .errors import ConfigurationError
from .fom import fom_solve, operators_for, stable_dt, fit_dt, theta_diagonal
from .rom import ReducedBasis, project_operators, rom_solve
from .snapshots import MemorySink

REPORT_COLUMNS = ("iter", "r_rho", "r_g", "nv_rq", "ratio_rho", "ratio_g",
                  "est_rho", "est_f", "wall_ms")


class PoolExhausted(Exception):
    """Every candidate sample has already been taken."""


@dataclass
class GreedyConfig:
    tol_ratio: float = 1e-4
    tol_error_rho: float = 0.01
    tol_error_f: float = 0.02
    max_iterations: int = 50
    initial_lebedev_points: int = 26
    M_min: int = 3
    M_max: int = 7
    solver: str = "cg"

    def __post_init__(self):
        for name in ("tol_ratio", "tol_error_rho", "tol_error_f"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be an integer >= 1")
        if self.M_min < 3 or self.M_max < self.M_min:
            raise ConfigurationError(f"invalid quadrature degree range [{self.M_min}, {self.M_max}]")


@dataclass
class SampledSets:
    t_rb_rho: set = field(default_factory=set)
    tv_rb_g: set = field(default_factory=set)  # (time index, node index into V_train)

    def copy(self):
        return SampledSets(set(self.t_rb_rho), set(self.tv_rb_g))

    def sampled_times(self):
        return set(self.t_rb_rho) | {n for n, _ in self.tv_rb_g}


@dataclass
class IterationRecord:
    iter: int
    r_rho: int
    r_g: int
    nv_rq: int
    ratio_rho: float
    ratio_g: float
    est_rho: float
    est_f: float
    wall_ms: float

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]


@dataclass
class GreedyReport:
    records: list = field(default_factory=list)
    termination: str = ""
    init_ms: float = 0.0
    picks: list = field(default_factory=list)  # (t_rho, t_g, node index) per iteration
    quadrature_history: list = field(default_factory=list)  # (n_nodes, provenance, degree)

    @property
    def total_ms(self):
        return self.init_ms + sum(r.wall_ms for r in self.records)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for rec in self.records:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in rec.row()])

    @staticmethod
    def read_csv(path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != REPORT_COLUMNS:
            raise ValueError(f"unexpected report header {rows[0]}")
        out = []
        for row in rows[1:]:
            vals = [int(row[0]), int(row[1]), int(row[2]), int(row[3])] + [float(v) for v in row[4:]]
            out.append(IterationRecord(*vals))
        return out


@dataclass
class GreedyResult:
    model: object
    report: GreedyReport
    sets: SampledSets
    quad_rq: AngularQuadrature
    fom_final: tuple  # (rho, g) of the last FOM(V_rq) run at the final time
    ops: object
    dt: float
    n_steps: int


# ------------------------------------------------------------------ pieces


def l1_indicators(trajectory, basis_rho, basis_g):
    """``||V Lambda^{-1} c||_1`` for every time level (and direction for ``g``).

    Returns ``(delta_rho, delta_g)`` with shapes ``(levels,)`` and
    ``(levels, n_nodes)``.
    """
    w_rho = basis_rho.V / basis_rho.Lambda  # V Lambda^{-1}
    w_g = basis_g.V / basis_g.Lambda
    delta_rho = np.abs(trajectory.c_rho @ w_rho.T).sum(axis=1)
    if trajectory.c_g is None:
        raise ValueError("trajectory was solved without keeping c_g")
    delta_g = np.abs(np.einsum("sr,lrk->lsk", w_g, trajectory.c_g)).sum(axis=1)
    return delta_rho, delta_g


def select_samples(delta_rho, delta_g, sets, first_time=1):
    """Argmax of the indicators over unsampled candidates.

    Candidates are time levels ``first_time..N_t``.  Ties go to the smallest
    time index, then the smallest node index.
    """
    delta_rho = np.array(delta_rho, dtype=float)
    delta_g = np.array(delta_g, dtype=float)
    masked_rho = np.full_like(delta_rho, -np.inf)
    masked_rho[first_time:] = delta_rho[first_time:]
    for n in sets.t_rb_rho:
        masked_rho[n] = -np.inf
    masked_g = np.full_like(delta_g, -np.inf)
    masked_g[first_time:] = delta_g[first_time:]
    for n, j in sets.tv_rb_g:
        masked_g[n, j] = -np.inf
    if not np.isfinite(masked_rho).any() or not np.isfinite(masked_g).any():
        raise PoolExhausted("no unsampled candidates left")
    t_rho = int(np.argmax(masked_rho))
    t_g, j = np.unravel_index(int(np.argmax(masked_g)), masked_g.shape)
    return t_rho, (int(t_g), int(j))


def update_sampled_sets(sets, picks, v_train):
    """Add the picks, including the antipodal direction when it is a training node."""
    t_rho, (t_g, j) = picks
    out = sets.copy()
    out.t_rb_rho.add(int(t_rho))
    out.tv_rb_g.add((int(t_g), int(j)))
    opposite = v_train.index_of(-v_train.nodes[j])
    if opposite is not None:
        out.tv_rb_g.add((int(t_g), int(opposite)))
    return out


def augment_quadrature(quad_rq, v, config):
    """Add ``v`` and ``-v`` (those not yet present) and rebuild the weights."""
    new = [u for u in (v, -np.asarray(v)) if quad_rq.index_of(u) is None]
    if not new:
        return quad_rq
    nodes = np.vstack([quad_rq.nodes] + [np.asarray(u, dtype=float)[None, :] for u in new])
    quad = nonneg_reduced_quadrature(nodes, quad_rq, config.M_min, config.M_max)
    quad.check()
    return quad


def update_bases(sets, fom_snapshots, ops, dt, epsilon, v_train, quad_rq):
    """Bases from sampled ``rho`` and ``g`` plus the scaled gradients of sampled ``rho``."""
    theta = theta_diagonal(ops, epsilon, dt)
    rho_cols, g_cols = [], []
    for n in sorted(sets.t_rb_rho):
        rho = fom_snapshots.rho[n]
        rho_cols.append(rho)
        g_cols.append(dt * (ops.dxm @ rho) / theta)
        g_cols.append(dt * (ops.dym @ rho) / theta)
    for n, j in sorted(sets.tv_rb_g):
        k = quad_rq.index_of(v_train.nodes[j])
        if k is None:
            raise ConfigurationError("sampled direction is missing from the reduced quadrature")
        g_cols.append(fom_snapshots.g[n][:, k])
    basis_rho = ReducedBasis.from_snapshots(np.column_stack(rho_cols))
    basis_g = ReducedBasis.from_snapshots(np.column_stack(g_cols))
    return basis_rho, basis_g


def final_time_estimators(model, trajectory, fom_rho, fom_g, quad_rq, v_train):
    """Relative final-time differences between ROM(V_train) and FOM(V_rq).

    The ``f`` estimator is maximized over directions shared by both sets; it
    is ``inf`` when they share none.
    """
    rho_r = model.basis_rho.B @ trajectory.c_rho[-1]
    est_rho = float(np.linalg.norm(rho_r - fom_rho) / np.linalg.norm(fom_rho))
    c_final = trajectory.final.c_g
    est_f = -math.inf
    for k, v in enumerate(quad_rq.nodes):
        j = v_train.index_of(v)
        if j is None:
            continue
        f_rom = rho_r + model.epsilon * (model.basis_g.B @ c_final[:, j])
        f_fom = fom_rho + model.epsilon * fom_g[:, k]
        est_f = max(est_f, float(np.linalg.norm(f_rom - f_fom) / np.linalg.norm(f_fom)))
    return est_rho, (math.inf if est_f == -math.inf else est_f)


def stopping_criteria(record, config):
    return (max(record.ratio_rho, record.ratio_g) < config.tol_ratio
            and record.est_rho < config.tol_error_rho
            and record.est_f < config.tol_error_f)


def initialize(problem, mesh, config, ops=None, dt=None, quad_rq=None):
    """Seed bases from the final-time FOM solution on a low-order Lebedev rule.

    Returns ``(basis_rho, basis_g, sets, quad_rq, (rho_final, g_final))``.
    """
    if quad_rq is None:
        quad_rq = lebedev(config.initial_lebedev_points)
    res = fom_solve(problem, mesh, quad_rq, snapshot_sink=None, ops=ops, dt=dt,
                    solver=config.solver, track_energy=False)
    rho, g = res.state.rho, res.state.g
    basis_rho = ReducedBasis.from_snapshots(rho[:, None])
    basis_g = ReducedBasis.from_snapshots(g)
    return basis_rho, basis_g, SampledSets(), quad_rq, (rho, g)


def greedy_offline(problem, mesh, v_train, config, ops=None, log=None):
    """Run the offline greedy loop; returns a :class:`GreedyResult`."""
    if ops is None:
        ops = operators_for(problem, mesh, v_train)
    dt, n_steps = fit_dt(stable_dt(problem, mesh, fit=False), problem.final_time)
    source = problem.source_vector(mesh)
    rho0, g0_train = problem.rho0(mesh), problem.g0(mesh, v_train.nodes)

    report = GreedyReport()
    t0 = time.perf_counter()
    basis_rho, basis_g, sets, quad_rq, fom_final = initialize(problem, mesh, config, ops=ops, dt=dt)
    report.init_ms = 1e3 * (time.perf_counter() - t0)
    report.quadrature_history.append((len(quad_rq), quad_rq.provenance.value,
                                      quad_rq.exactness_degree))

    model = None
    for it in range(1, config.max_iterations + 2):
        t_iter = time.perf_counter()
        model = project_operators(ops, basis_rho, basis_g, quad_rq, problem.epsilon, dt,
                                  source=source, n_steps=n_steps)
        traj = rom_solve(model, model.project_initial(rho0, g0_train), n_steps, v_train,
                         keep_g=True)
        est_rho, est_f = final_time_estimators(model, traj, fom_final[0], fom_final[1],
                                               quad_rq, v_train)
        record = IterationRecord(it, basis_rho.rank, basis_g.rank, len(quad_rq),
                                 basis_rho.spectral_ratio(), basis_g.spectral_ratio(),
                                 est_rho, est_f, 0.0)
        stop = stopping_criteria(record, config)
        if stop:
            report.termination = "converged"
        elif it > config.max_iterations:
            report.termination = "budget"
        else:
            delta_rho, delta_g = l1_indicators(traj, basis_rho, basis_g)
            try:
                picks = select_samples(delta_rho, delta_g, sets)
            except PoolExhausted:
                report.termination = "exhausted"
                picks = None
            if picks is not None:
                report.picks.append((picks[0], picks[1][0], picks[1][1]))
                sets = update_sampled_sets(sets, picks, v_train)
                v_new = v_train.nodes[picks[1][1]]
                if quad_rq.index_of(v_new) is None:
                    quad_rq = augment_quadrature(quad_rq, v_new, config)
                report.quadrature_history.append((len(quad_rq), quad_rq.provenance.value,
                                                  quad_rq.exactness_degree))
                sink = MemorySink(times=sets.sampled_times() | {n_steps})
                res = fom_solve(problem, mesh, quad_rq, snapshot_sink=sink, ops=ops, dt=dt,
                                solver=config.solver, track_energy=False)
                fom_final = (res.state.rho, res.state.g)
                basis_rho, basis_g = update_bases(sets, sink, ops, dt, problem.epsilon,
                                                  v_train, quad_rq)
        record.wall_ms = 1e3 * (time.perf_counter() - t_iter)
        report.records.append(record)
        if log is not None:
            log(record)
        if report.termination:
            break

    return GreedyResult(model, report, sets, quad_rq, fom_final, ops, dt, n_steps)
