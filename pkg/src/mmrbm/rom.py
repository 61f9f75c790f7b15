"""Projected micro-macro solver, moment reconstruction and unseen-direction prediction."""

import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .angular import AngularQuadrature
from .errors import ConfigurationError, NumericalError
from .fom import split_velocities, theta_diagonal

SVD_RTOL = 1e-12


@dataclass
class ReducedBasis:
    """Orthonormal basis ``B`` with the SVD factors of its snapshot matrix ``S = B diag(Lambda) V^T``."""

    B: np.ndarray  # (n_dof, r)
    Lambda: np.ndarray  # (r,) descending
    V: np.ndarray  # (snapshot_count, r)

    @property
    def rank(self):
        return self.B.shape[1]

    @property
    def snapshot_count(self):
        return self.V.shape[0]

    @classmethod
    def from_snapshots(cls, S, rtol=SVD_RTOL):
        """Thin SVD of the snapshot matrix, dropping singular values below ``rtol * sigma_max``."""
        S = np.asarray(S, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.size == 0 or not np.any(S):
            raise NumericalError("snapshot matrix is empty or identically zero")
        U, s, Vt = np.linalg.svd(S, full_matrices=False)
        keep = s > rtol * s[0]
        return cls(U[:, keep], s[keep], Vt[keep].T)

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.ones(n), np.eye(n))

    def spectral_ratio(self):
        return float(self.Lambda[-1] / self.Lambda.sum())

    def snapshot_coordinates(self, c):
        """``V Lambda^{-1} c``: coefficients in the snapshot (interpolation) basis."""
        return self.V @ (np.asarray(c) / self.Lambda[:, None] if np.ndim(c) == 2
                         else np.asarray(c) / self.Lambda)


@dataclass
class RomState:
    c_rho: np.ndarray
    c_g: np.ndarray  # (r_g, n_nodes)
    time_index: int = 0

    def is_finite(self):
        return bool(np.all(np.isfinite(self.c_rho)) and np.all(np.isfinite(self.c_g)))


@dataclass
class ReducedModel:
    basis_rho: ReducedBasis
    basis_g: ReducedBasis
    quad_rq: AngularQuadrature
    epsilon: float
    dt: float
    n_steps: int
    # projected operators
    mass_rho: np.ndarray
    lhs_rho: np.ndarray  # B^T (M + dt Sa + dt Djump) B
    mass_g: np.ndarray
    theta_g: np.ndarray
    dxp_rg: np.ndarray  # B_rho^T Dx^+ B_g
    dyp_rg: np.ndarray
    dxm_gr: np.ndarray  # B_g^T Dx^- B_rho
    dym_gr: np.ndarray
    up_xm: np.ndarray  # B_g^T Dx^- B_g
    up_xp: np.ndarray
    up_ym: np.ndarray
    up_yp: np.ndarray
    source_rho: np.ndarray
    _theta_factor: object = field(default=None, repr=False)
    _h_factors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        try:
            self._theta_factor = sla.cho_factor(self.theta_g)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("reduced Theta is not positive definite") from exc
        self.h_factor(self.quad_rq)

    @property
    def r_rho(self):
        return self.basis_rho.rank

    @property
    def r_g(self):
        return self.basis_g.rank

    def h_matrix(self, quad):
        """Reduced Schur complement for the angular set ``quad``."""
        m2 = quad.second_moments()
        tinv_dm = {"x": sla.cho_solve(self._theta_factor, self.dxm_gr),
                   "y": sla.cho_solve(self._theta_factor, self.dym_gr)}
        dp = {"x": self.dxp_rg, "y": self.dyp_rg}
        index = {"x": 0, "y": 1}
        coupling = sum(m2[index[a], index[b]] * dp[a] @ tinv_dm[b]
                       for a in "xy" for b in "xy")
        H = self.lhs_rho - self.dt**2 * coupling
        return 0.5 * (H + H.T)

    def h_factor(self, quad):
        m2 = quad.second_moments()
        key = tuple(np.round(m2[:2, :2].ravel(), 15))
        if key not in self._h_factors:
            try:
                self._h_factors[key] = sla.cho_factor(self.h_matrix(quad))
            except np.linalg.LinAlgError as exc:
                raise NumericalError("reduced Schur complement is not positive definite") from exc
        return self._h_factors[key]

    def theta_solve(self, rhs):
        return sla.cho_solve(self._theta_factor, rhs)

    def upwind_apply(self, C, nodes):
        """Column ``j``: ``B_g^T (D^up_x + D^up_y) B_g C[:, j]`` for direction ``nodes[j]``."""
        vxm, vxp, vym, vyp = split_velocities(np.asarray(nodes).reshape(-1, 3))
        return (self.up_xm @ (C * vxm) + self.up_xp @ (C * vxp)
                + self.up_ym @ (C * vym) + self.up_yp @ (C * vyp))

    def project_initial(self, rho0, g0):
        """Euclidean projection of full-order initial data."""
        return RomState(self.basis_rho.B.T @ rho0, self.basis_g.B.T @ g0, 0)

    def compression_ratio(self, n_train, n_dof):
        return (self.r_rho + len(self.quad_rq) * self.r_g) / ((n_train + 1) * n_dof)


def project_operators(ops, basis_rho, basis_g, quad, epsilon, dt, source=None, n_steps=0):
    """Galerkin projection of every full-order operator onto the two bases."""
    Br, Bg = basis_rho.B, basis_g.B
    for name, B in (("rho", Br), ("g", Bg)):
        if not np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-10):
            raise NumericalError(f"{name} basis is not orthonormal")
    m2 = quad.second_moments()
    if abs(m2[0, 1]) > 1e-10:
        raise ConfigurationError("reduced quadrature has a non-zero <v_x v_y> moment")
    area = ops.mesh.cell_area
    theta = theta_diagonal(ops, epsilon, dt)
    lhs_full = ops.mass + dt * ops.sigma_a_mat + dt * ops.djump
    if source is None:
        source = np.zeros(ops.n_dof)
    return ReducedModel(
        basis_rho=basis_rho, basis_g=basis_g, quad_rq=quad,
        epsilon=float(epsilon), dt=float(dt), n_steps=int(n_steps),
        mass_rho=area * (Br.T @ Br),
        lhs_rho=Br.T @ (lhs_full @ Br),
        mass_g=area * (Bg.T @ Bg),
        theta_g=Bg.T @ (theta[:, None] * Bg),
        dxp_rg=Br.T @ (ops.dxp @ Bg),
        dyp_rg=Br.T @ (ops.dyp @ Bg),
        dxm_gr=Bg.T @ (ops.dxm @ Br),
        dym_gr=Bg.T @ (ops.dym @ Br),
        up_xm=Bg.T @ (ops.dxm @ Bg),
        up_xp=Bg.T @ (ops.dxp @ Bg),
        up_ym=Bg.T @ (ops.dym @ Bg),
        up_yp=Bg.T @ (ops.dyp @ Bg),
        source_rho=Br.T @ np.asarray(source, dtype=float),
    )


def rom_step(rstate, rmodel, active_quad, source_proj=None):
    eps, dt = rmodel.epsilon, rmodel.dt
    w = active_quad.weights
    vx, vy = active_quad.vx, active_quad.vy
    if source_proj is None:
        source_proj = rmodel.source_rho
    C = rstate.c_g

    transport = rmodel.upwind_apply(C, active_quad.nodes)
    transport -= (transport @ w)[:, None]
    b_g = eps**2 * (rmodel.mass_g @ C) - eps * dt * transport
    b_rho = rmodel.mass_rho @ rstate.c_rho + dt * source_proj

    tb = rmodel.theta_solve(b_g)
    rhs = b_rho - dt * (rmodel.dxp_rg @ (tb @ (w * vx)) + rmodel.dyp_rg @ (tb @ (w * vy)))
    c_rho = sla.cho_solve(rmodel.h_factor(active_quad), rhs)

    grad = np.outer(rmodel.dxm_gr @ c_rho, vx) + np.outer(rmodel.dym_gr @ c_rho, vy)
    c_g = rmodel.theta_solve(b_g - dt * grad)
    return RomState(c_rho, c_g, rstate.time_index + 1)


@dataclass
class RomTrajectory:
    """Per-level reduced quantities, levels ``0..n_steps``.

    ``first`` holds ``<v_a c_g>`` (shape ``(levels, 3, r_g)``), ``second``
    holds ``<v_a v_b c_g>`` (``(levels, 3, 3, r_g)``) and ``upwind`` the
    weighted upwind transport ``<A_v c_v>`` used for prediction.
    """

    c_rho: np.ndarray
    first: np.ndarray
    second: np.ndarray
    upwind: np.ndarray
    final: RomState
    c_g: Optional[np.ndarray] = None  # (levels, r_g, n_nodes) when kept

    @property
    def n_steps(self):
        return self.c_rho.shape[0] - 1


def _record(rmodel, state, quad):
    w = quad.weights
    nodes = quad.nodes
    C = state.c_g
    first = C @ (w[:, None] * nodes)  # (r_g, 3)
    second = np.einsum("rk,k,ka,kb->abr", C, w, nodes, nodes)
    upwind = rmodel.upwind_apply(C, nodes) @ w
    return first.T, second, upwind


def rom_solve(rmodel, initial_projection, n_steps, active_quad, keep_g=False, step_callback=None):
    state = initial_projection
    c_rho, first, second, upwind, cg = [], [], [], [], []

    def record(s):
        f1, f2, up = _record(rmodel, s, active_quad)
        c_rho.append(s.c_rho)
        first.append(f1)
        second.append(f2)
        upwind.append(up)
        if keep_g:
            cg.append(s.c_g)

    record(state)
    for _ in range(int(n_steps)):
        state = rom_step(state, rmodel, active_quad)
        record(state)
        if step_callback is not None:
            step_callback(state)
    if not state.is_finite():
        raise NumericalError("reduced solution became non-finite")
    return RomTrajectory(np.array(c_rho), np.array(first), np.array(second), np.array(upwind),
                         state, np.array(cg) if keep_g else None)


def reconstruct_moments(rmodel, trajectory, order):
    """Full-space moment histories.

    order 0 -> ``(levels, n_dof)``; order 1 -> ``(levels, 3, n_dof)``;
    order 2 -> ``(levels, 3, 3, n_dof)``.
    """
    Br, Bg = rmodel.basis_rho.B, rmodel.basis_g.B
    eps = rmodel.epsilon
    if order == 0:
        return trajectory.c_rho @ Br.T
    if order == 1:
        return eps * trajectory.first @ Bg.T
    if order == 2:
        rho = trajectory.c_rho @ Br.T
        out = eps * trajectory.second @ Bg.T
        for a in range(3):
            out[:, a, a, :] += rho / 3.0
        return out
    raise ValueError(f"unsupported moment order {order!r}")


def predict_unseen(rmodel, v_unseen, c_rho_history, c_upwind_history, c_g0=None):
    """March the micro equation for directions outside the reduced quadrature.

    ``v_unseen`` is one unit vector or an array of them.  Returns the ``c_g``
    history with shape ``(levels, r_g, n_directions)``; the angular flux is
    ``B_rho c_rho + eps B_g c_g``.
    """
    nodes = np.asarray(v_unseen, dtype=float).reshape(-1, 3)
    if np.any(np.abs(np.linalg.norm(nodes, axis=1) - 1.0) > 1e-10):
        raise ValueError("unseen directions must be unit vectors")
    c_rho_history = np.asarray(c_rho_history)
    c_upwind_history = np.asarray(c_upwind_history)
    if c_rho_history.shape[0] != c_upwind_history.shape[0]:
        raise ValueError("c_rho and upwind histories have different lengths")
    eps, dt = rmodel.epsilon, rmodel.dt
    vx, vy = nodes[:, 0], nodes[:, 1]
    C = np.zeros((rmodel.r_g, nodes.shape[0])) if c_g0 is None else np.array(c_g0, dtype=float)
    history = [C]
    for n in range(c_rho_history.shape[0] - 1):
        transport = rmodel.upwind_apply(C, nodes) - c_upwind_history[n][:, None]
        c_rho = c_rho_history[n + 1]
        grad = np.outer(rmodel.dxm_gr @ c_rho, vx) + np.outer(rmodel.dym_gr @ c_rho, vy)
        C = rmodel.theta_solve(eps**2 * (rmodel.mass_g @ C) - eps * dt * transport - dt * grad)
        history.append(C)
    return np.array(history)


def expand_f(rmodel, c_rho, c_g):
    """``B_rho c_rho + eps B_g c_g`` for one level; ``c_g`` may hold many directions."""
    rho = rmodel.basis_rho.B @ c_rho
    return rho[:, None] + rmodel.epsilon * (rmodel.basis_g.B @ np.atleast_2d(c_g.T).T)


# ---------------------------------------------------------------- serialisation

MODEL_MAGIC = b"MMRBROM1"
_ARRAYS = ("mass_rho", "lhs_rho", "mass_g", "theta_g", "dxp_rg", "dyp_rg", "dxm_gr", "dym_gr",
           "up_xm", "up_xp", "up_ym", "up_yp", "source_rho")


def model_to_bytes(rmodel):
    """Binary form: magic, header length, JSON header, quadrature text, ``<f8`` arrays."""
    arrays = {
        "B_rho": rmodel.basis_rho.B, "Lambda_rho": rmodel.basis_rho.Lambda,
        "V_rho": rmodel.basis_rho.V,
        "B_g": rmodel.basis_g.B, "Lambda_g": rmodel.basis_g.Lambda, "V_g": rmodel.basis_g.V,
    }
    arrays.update({name: getattr(rmodel, name) for name in _ARRAYS})
    quad_text = rmodel.quad_rq.to_text().encode()
    header = {
        "epsilon": rmodel.epsilon, "dt": rmodel.dt, "n_steps": rmodel.n_steps,
        "r_rho": rmodel.r_rho, "r_g": rmodel.r_g,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays.items()],
        "quadrature_bytes": len(quad_text),
    }
    head = json.dumps(header).encode()
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(np.array([len(head)], dtype="<u8").tobytes())
    buf.write(head)
    buf.write(quad_text)
    for a in arrays.values():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(rmodel, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(rmodel))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def model_from_bytes(raw):
    if raw[:8] != MODEL_MAGIC:
        raise ValueError("not a reduced model file")
    head_len = int(np.frombuffer(raw, dtype="<u8", count=1, offset=8)[0])
    pos = 16
    header = json.loads(raw[pos:pos + head_len])
    pos += head_len
    qlen = header["quadrature_bytes"]
    quad = AngularQuadrature.from_text(raw[pos:pos + qlen].decode())
    pos += qlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    basis_rho = ReducedBasis(arrays.pop("B_rho"), arrays.pop("Lambda_rho"), arrays.pop("V_rho"))
    basis_g = ReducedBasis(arrays.pop("B_g"), arrays.pop("Lambda_g"), arrays.pop("V_g"))
    return ReducedModel(basis_rho=basis_rho, basis_g=basis_g, quad_rq=quad,
                        epsilon=header["epsilon"], dt=header["dt"], n_steps=header["n_steps"],
                        **arrays)
