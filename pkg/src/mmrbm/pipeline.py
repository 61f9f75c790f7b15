"""End-to-end pipeline: train, run online, predict, and compare with a reference FOM."""

import time
from dataclasses import dataclass, field

import numpy as np

from .angular import lebedev
from .errors import ConfigurationError
from .fom import fit_dt, fom_solve, operators_for, stable_dt
from .greedy import greedy_offline
from .metrics import MetricAccumulator, compression_ratio
from .rom import predict_unseen, reconstruct_moments, rom_solve
from .snapshots import MemorySink


@dataclass
class OnlineResult:
    trajectory: object
    rho: np.ndarray  # (levels, n_dof)
    vf: np.ndarray  # (levels, 3, n_dof)
    wall_ms: float


@dataclass
class Evaluation:
    metrics: object
    series: dict = field(default_factory=dict)  # per-level relative errors
    online: OnlineResult = None
    fom_final: tuple = None  # (rho, g) of the reference at the final time
    rom_final_rho: np.ndarray = None


def run_online(model, problem, mesh):
    """ROM on the reduced quadrature from the projected initial data."""
    t0 = time.perf_counter()
    quad = model.quad_rq
    state = model.project_initial(problem.rho0(mesh), problem.g0(mesh, quad.nodes))
    traj = rom_solve(model, state, model.n_steps, quad)
    wall = 1e3 * (time.perf_counter() - t0)
    return OnlineResult(traj, reconstruct_moments(model, traj, 0),
                        reconstruct_moments(model, traj, 1), wall)


def predict_directions(model, problem, mesh, online, nodes):
    """Reduced ``g`` coefficient histories at arbitrary directions."""
    c_g0 = model.basis_g.B.T @ problem.g0(mesh, nodes)
    return predict_unseen(model, nodes, online.trajectory.c_rho, online.trajectory.upwind, c_g0)


def evaluate(model, problem, mesh, v_test, n_train, ops=None, solver="cg"):
    """Metrics of the trained model against FOM on ``v_test``, streamed level by level."""
    if ops is None:
        ops = operators_for(problem, mesh, v_test)
    online = run_online(model, problem, mesh)
    t0 = time.perf_counter()
    c_pred = predict_directions(model, problem, mesh, online, v_test.nodes)
    predict_ms = 1e3 * (time.perf_counter() - t0)

    eps = problem.epsilon
    Bg = model.basis_g.B
    w = v_test.weights
    wv = w[:, None] * v_test.nodes  # (K, 3)
    acc = MetricAccumulator(model.dt, mesh.cell_area)
    series = {"t": [], "rel_rho": [], "rel_vf": [], "rel_f": []}
    final = {}

    def sink(n, rho, g):
        rho_r = online.rho[n]
        vf_fom = (eps * (g @ wv) + np.outer(rho, wv.sum(axis=0))).T[:2]
        vf_rom = online.vf[n][:2]
        f_fom = rho[:, None] + eps * g
        f_rom = rho_r[:, None] + eps * (Bg @ c_pred[n])
        acc.add(n, rho_r, rho, vf_rom, vf_fom, f_rom, f_fom)
        series["t"].append(n * model.dt)
        series["rel_rho"].append(_rel(rho_r, rho))
        series["rel_vf"].append(_rel(vf_rom, vf_fom))
        series["rel_f"].append(float(np.max(np.linalg.norm(f_rom - f_fom, axis=0)
                                            / np.maximum(np.linalg.norm(f_fom, axis=0), 1e-300))))
        if n == model.n_steps:
            final["rho"], final["g"] = rho.copy(), g.copy()

    t0 = time.perf_counter()
    res = fom_solve(problem, mesh, v_test, snapshot_sink=sink, ops=ops, dt=model.dt,
                    solver=solver, track_energy=False)
    fom_ms = 1e3 * (time.perf_counter() - t0)
    if res.n_steps != model.n_steps:
        raise ConfigurationError("reference and reduced time grids differ")
    metrics = acc.result()
    metrics.compression_ratio = compression_ratio(model.r_rho, model.r_g, len(model.quad_rq),
                                                  n_train, mesh.n_dof)
    metrics.wall_times = {"online_ms": online.wall_ms, "predict_ms": predict_ms,
                          "fom_test_ms": fom_ms}
    return Evaluation(metrics, {k: np.array(v) for k, v in series.items()}, online,
                      (final.get("rho"), final.get("g")), online.rho[-1])


def _rel(a, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def train(preset, log=None):
    """Greedy offline stage for a preset; returns the greedy result and training rule."""
    mesh = preset.mesh
    v_train = lebedev(preset.n_train)
    return greedy_offline(preset.problem, mesh, v_train, preset.config, log=log), v_train


# ------------------------------------------------------------------ POD


@dataclass
class PodResult:
    basis_rho: np.ndarray
    basis_g: np.ndarray
    singular_rho: np.ndarray
    singular_g: np.ndarray
    fom_ms: float
    svd_ms: float

    @property
    def total_ms(self):
        return self.fom_ms + self.svd_ms


DEFAULT_MAX_SNAPSHOTS = 200_000


def pod_baseline(fom_snapshots, rank=None, max_snapshots=DEFAULT_MAX_SNAPSHOTS):
    """SVD of a snapshot matrix; returns ``(basis, singular values, seconds)``.

    Refuses snapshot matrices with more than ``max_snapshots`` columns.
    """
    S = np.asarray(fom_snapshots, dtype=float)
    if S.ndim != 2:
        raise ValueError("snapshot matrix must be two dimensional")
    if S.shape[1] > max_snapshots:
        raise MemoryError(f"{S.shape[1]} snapshots exceed the bound of {max_snapshots}")
    t0 = time.perf_counter()
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    seconds = time.perf_counter() - t0
    r = len(s) if rank is None else int(rank)
    return U[:, :r], s, seconds


def pod_from_fom(problem, mesh, v_train, dt=None, ops=None, max_snapshots=DEFAULT_MAX_SNAPSHOTS,
                 solver="cg"):
    """Vanilla POD: FOM on the full training set, then one SVD for ``rho`` and one for ``g``."""
    if dt is None:
        dt = stable_dt(problem, mesh, fit=False)
    n_steps = fit_dt(dt, problem.final_time)[1]
    if n_steps * len(v_train) > max_snapshots:
        raise MemoryError(f"{n_steps * len(v_train)} g snapshots exceed the bound of {max_snapshots}")
    sink = MemorySink()
    t0 = time.perf_counter()
    res = fom_solve(problem, mesh, v_train, snapshot_sink=sink, ops=ops, dt=dt, solver=solver,
                    track_energy=False)
    fom_ms = 1e3 * (time.perf_counter() - t0)
    levels = sorted(sink.rho)[1:]
    S_rho = np.column_stack([sink.rho[n] for n in levels])
    S_g = np.hstack([sink.g[n] for n in levels])
    B_rho, s_rho, t_rho = pod_baseline(S_rho, max_snapshots=max_snapshots)
    B_g, s_g, t_g = pod_baseline(S_g, max_snapshots=max_snapshots)
    return PodResult(B_rho, B_g, s_rho, s_g, fom_ms, 1e3 * (t_rho + t_g)), res
