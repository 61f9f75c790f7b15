"""Full-order micro-macro solver.

One step is the IMEX update: implicit in ``rho`` and the relaxation of ``g``,
explicit in the projected transport of ``g``.  The coupled block system is
reduced to a symmetric positive definite problem for ``rho`` (Schur
complement), after which every ``g`` column is recovered independently.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, ModelError, SchemeError, SolverError
from .mesh import BoundaryCondition, assemble_operators, sample_field

CROSS_MOMENT_TOL = 1e-10


@dataclass
class ProblemDefinition:
    """Kinetic model data.

    Fields may be scalars, per-cell arrays or callables ``f(x, y)`` evaluated
    at cell centers.  ``initial_g`` is ``None`` (zero) or a callable
    ``g0(x, y, nodes) -> (n_dof, n_nodes)``.
    """

    epsilon: float
    final_time: float
    sigma_s: object = 1.0
    sigma_a: object = 0.0
    source: object = 0.0
    initial_rho: object = 0.0
    initial_g: Optional[Callable] = None
    bc: BoundaryCondition = BoundaryCondition.VACUUM

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not self.final_time > 0:
            raise ConfigurationError("final time must be positive")
        self.bc = BoundaryCondition(self.bc)

    def with_(self, **changes):
        return replace(self, **changes)

    def source_vector(self, mesh):
        """Weak-form source, ``int G e_k``."""
        return mesh.cell_area * sample_field(mesh, self.source)

    def rho0(self, mesh):
        return sample_field(mesh, self.initial_rho)

    def g0(self, mesh, nodes):
        nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
        if self.initial_g is None:
            return np.zeros((mesh.n_dof, nodes.shape[0]))
        xc, yc = mesh.cell_centers()
        return np.asarray(self.initial_g(xc, yc, nodes), dtype=float).reshape(mesh.n_dof, -1)

    def initial_state(self, mesh, quad):
        return FomState(self.rho0(mesh), self.g0(mesh, quad.nodes), 0)


@dataclass
class FomState:
    rho: np.ndarray
    g: np.ndarray  # (n_dof, n_nodes)
    time_index: int = 0

    def is_finite(self):
        return bool(np.all(np.isfinite(self.rho)) and np.all(np.isfinite(self.g)))


def default_alphas(quad):
    """Jump penalties ``1/<v_x^2>_h`` and ``1/<v_y^2>_h``."""
    m2 = quad.second_moments()
    return 1.0 / m2[0, 0], 1.0 / m2[1, 1]


def operators_for(problem, mesh, quad):
    alpha_x, alpha_y = default_alphas(quad)
    return assemble_operators(mesh, problem.sigma_s, problem.sigma_a, problem.bc,
                              alpha_x, alpha_y)


def raw_stable_dt(epsilon, h, sigma_values):
    """Largest step allowed by every scattering value present in the medium."""
    dts = []
    for sigma in np.unique(np.asarray(sigma_values, dtype=float)):
        if epsilon < 0.25 * sigma * h:
            dts.append(h)
        elif sigma > 0:
            dts.append(0.25 * min(h / math.sqrt(2.0), epsilon * h / (math.sqrt(2.0) * sigma)))
        else:
            dts.append(0.25 * h / math.sqrt(2.0))
    return min(dts)


def fit_dt(dt, final_time):
    """Shrink ``dt`` so that it divides the final time; returns ``(dt, n_steps)``."""
    n_steps = max(1, int(math.ceil(final_time / dt * (1.0 - 1e-12))))
    return final_time / n_steps, n_steps


def stable_dt(problem, mesh, quad=None, fit=True):
    sigma = sample_field(mesh, problem.sigma_s)
    dt = raw_stable_dt(problem.epsilon, mesh.h, sigma)
    if not fit:
        return dt
    return fit_dt(dt, problem.final_time)[0]


@dataclass
class SchurSystem:
    """Schur complement ``H`` for ``rho`` plus the diagonal ``Theta``.

    ``solver`` is ``"cg"`` (Jacobi preconditioned conjugate gradients) or
    ``"direct"`` (cached sparse LU).
    """

    H: sp.csr_matrix
    theta: np.ndarray
    theta_inv: np.ndarray
    epsilon: float
    dt: float
    solver: str = "cg"
    rtol: float = 1e-10
    maxiter: Optional[int] = None
    _jacobi: object = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)
    last_iterations: int = 0

    def __post_init__(self):
        n = self.H.shape[0]
        if self.maxiter is None:
            self.maxiter = 10 * n
        diag = self.H.diagonal()
        self._jacobi = spla.LinearOperator((n, n), matvec=lambda r: r / diag, dtype=float)
        if self.solver == "direct":
            self._lu = spla.splu(self.H.tocsc())
        elif self.solver != "cg":
            raise ConfigurationError(f"unknown linear solver {self.solver!r}")

    def solve(self, rhs, x0=None):
        if self._lu is not None:
            return self._lu.solve(rhs)
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return np.zeros_like(rhs)
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = spla.cg(self.H, rhs, x0=x0, rtol=self.rtol, atol=0.0,
                          maxiter=self.maxiter, M=self._jacobi, callback=tick)
        self.last_iterations = count[0]
        if info != 0:
            residual = np.linalg.norm(rhs - self.H @ x) / bnorm
            raise SolverError(f"CG did not converge in {self.maxiter} iterations "
                              f"(relative residual {residual:.3e})", residual=residual)
        return x


def theta_diagonal(ops, epsilon, dt):
    area = ops.mesh.cell_area
    return epsilon**2 * (area + dt * area * ops.sigma_a) + dt * area * ops.sigma_s


def schur_matrix(ops, theta_inv, dt, mxx, myy):
    tinv = sp.diags(theta_inv)
    H = (ops.mass + dt * ops.sigma_a_mat + dt * ops.djump
         - dt**2 * (mxx * (ops.dxp @ tinv @ ops.dxm) + myy * (ops.dyp @ tinv @ ops.dym)))
    H = sp.csr_matrix(H)
    H.sum_duplicates()
    H.sort_indices()
    return H


def assemble_schur(ops, quad, epsilon, dt, solver="cg", rtol=1e-10):
    m2 = quad.second_moments()
    if abs(m2[0, 1]) > CROSS_MOMENT_TOL:
        raise SchemeError(f"quadrature cross moment <v_x v_y> = {m2[0, 1]:.3e} is not zero")
    theta = theta_diagonal(ops, epsilon, dt)
    if np.any(theta <= 0):
        raise ModelError("Theta has a non-positive entry (epsilon and sigma_s both vanish)")
    theta_inv = 1.0 / theta
    H = schur_matrix(ops, theta_inv, dt, m2[0, 0], m2[1, 1])
    return SchurSystem(H, theta, theta_inv, epsilon, dt, solver=solver, rtol=rtol)


def split_velocities(nodes):
    """Per-node coefficients of ``D^-`` and ``D^+`` in the upwind derivative."""
    vx, vy = nodes[:, 0], nodes[:, 1]
    return (np.where(vx >= 0, vx, 0.0), np.where(vx < 0, vx, 0.0),
            np.where(vy >= 0, vy, 0.0), np.where(vy < 0, vy, 0.0))


def upwind_columns(ops, g, nodes):
    """Column ``j`` is ``(D^up_x + D^up_y) g_j`` for direction ``nodes[j]``."""
    vxm, vxp, vym, vyp = split_velocities(nodes)
    return (ops.dxm @ (g * vxm) + ops.dxp @ (g * vxp)
            + ops.dym @ (g * vym) + ops.dyp @ (g * vyp))


def fom_step(state, ops, quad, schur, problem, dt, source=None):
    if schur.dt != dt or schur.epsilon != problem.epsilon:
        raise ConfigurationError("Schur system was assembled for a different (epsilon, dt)")
    eps = problem.epsilon
    w = quad.weights
    vx, vy = quad.vx, quad.vy
    area = ops.mesh.cell_area
    if source is None:
        source = problem.source_vector(ops.mesh)

    transport = upwind_columns(ops, state.g, quad.nodes)
    transport -= (transport @ w)[:, None]
    b_g = eps**2 * area * state.g - eps * dt * transport
    b_rho = area * state.rho + dt * source

    tb = schur.theta_inv[:, None] * b_g
    rhs = b_rho - dt * (ops.dxp @ (tb @ (w * vx)) + ops.dyp @ (tb @ (w * vy)))
    rho = schur.solve(rhs, x0=state.rho)

    grad = np.outer(ops.dxm @ rho, vx) + np.outer(ops.dym @ rho, vy)
    g = schur.theta_inv[:, None] * (b_g - dt * grad)
    return FomState(rho, g, state.time_index + 1)


def discrete_energy(state, quad, ops, epsilon, dt):
    if np.any(quad.weights < 0):
        raise ModelError("energy requires non-negative weights")
    area = ops.mesh.cell_area
    g2 = state.g**2
    return float(area * state.rho @ state.rho
                 + epsilon**2 * area * np.sum(g2 @ quad.weights)
                 + dt * area * (ops.sigma_s @ (g2 @ quad.weights)))


@dataclass
class FomResult:
    state: FomState
    energies: np.ndarray
    dt: float
    n_steps: int
    ops: object
    quad: object


def fom_solve(problem, mesh, quad, snapshot_sink=None, ops=None, dt=None,
              solver="cg", rtol=1e-10, initial_state=None, track_energy=True):
    """March from ``t = 0`` to the final time.

    ``snapshot_sink(n, rho, g)`` is called for every time level, ``n = 0``
    included.  Returns a :class:`FomResult` with the energy history.
    """
    if np.any(quad.weights < 0):
        raise ModelError("negative quadrature weights are not allowed in the march")
    if ops is None:
        ops = operators_for(problem, mesh, quad)
    if dt is None:
        dt, n_steps = fit_dt(stable_dt(problem, mesh, quad, fit=False), problem.final_time)
    else:
        dt, n_steps = fit_dt(dt, problem.final_time)
    schur = assemble_schur(ops, quad, problem.epsilon, dt, solver=solver, rtol=rtol)
    source = problem.source_vector(mesh)
    state = initial_state if initial_state is not None else problem.initial_state(mesh, quad)

    energies = []
    if track_energy:
        energies.append(discrete_energy(state, quad, ops, problem.epsilon, dt))
    if snapshot_sink is not None:
        snapshot_sink(0, state.rho, state.g)
    for _ in range(n_steps):
        state = fom_step(state, ops, quad, schur, problem, dt, source=source)
        if not state.is_finite():
            raise SolverError(f"non-finite state at step {state.time_index}")
        if track_energy:
            energies.append(discrete_energy(state, quad, ops, problem.epsilon, dt))
        if snapshot_sink is not None:
            snapshot_sink(state.time_index, state.rho, state.g)
    return FomResult(state, np.array(energies), dt, n_steps, ops, quad)


def diffusion_limit_solve(problem, mesh, dt, ops=None, n_steps=None, snapshot_sink=None):
    """Backward Euler for the diffusion limit built from the same DG operators.

    Returns the array of ``rho`` at every time level, shape ``(n_steps + 1, n_dof)``.
    """
    if ops is None:
        ops = assemble_operators(mesh, problem.sigma_s, problem.sigma_a, problem.bc)
    if np.any(ops.sigma_s <= 0):
        raise ModelError("diffusion limit needs sigma_s > 0 in every cell")
    if n_steps is None:
        dt, n_steps = fit_dt(dt, problem.final_time)
    theta_inv = 1.0 / (dt * mesh.cell_area * ops.sigma_s)
    H = schur_matrix(ops, theta_inv, dt, 1.0 / 3.0, 1.0 / 3.0)
    lu = spla.splu(H.tocsc())
    source = problem.source_vector(mesh)
    rho = problem.rho0(mesh)
    history = [rho]
    if snapshot_sink is not None:
        snapshot_sink(0, rho, None)
    for n in range(n_steps):
        rho = lu.solve(mesh.cell_area * rho + dt * source)
        history.append(rho)
        if snapshot_sink is not None:
            snapshot_sink(n + 1, rho, None)
    return np.array(history)

