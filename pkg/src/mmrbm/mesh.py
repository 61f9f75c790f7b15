"""Uniform rectangular mesh and piecewise-constant DG operators.

Cells are numbered ``k = i + nx * j`` (x index fastest).  With indicator
basis functions every operator below is the weak form, i.e. it already
carries the face length (derivatives) or the cell area (mass).
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ModelError


class BoundaryCondition(str, Enum):
    VACUUM = "vacuum"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class SpatialMesh:
    x_range: tuple
    y_range: tuple
    nx: int
    ny: int

    @property
    def dx(self):
        return (self.x_range[1] - self.x_range[0]) / self.nx

    @property
    def dy(self):
        return (self.y_range[1] - self.y_range[0]) / self.ny

    @property
    def h(self):
        return min(self.dx, self.dy)

    @property
    def n_dof(self):
        return self.nx * self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    def cell_centers(self):
        """Return ``(xc, yc)``, each of length ``n_dof`` in cell order."""
        xc = self.x_range[0] + (np.arange(self.nx) + 0.5) * self.dx
        yc = self.y_range[0] + (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(xc, yc)  # shape (ny, nx): row j, column i
        return X.ravel(), Y.ravel()

    def x_edges(self):
        return np.linspace(self.x_range[0], self.x_range[1], self.nx + 1)

    def y_edges(self):
        return np.linspace(self.y_range[0], self.y_range[1], self.ny + 1)

    def to_grid(self, values):
        """Reshape a cell vector to an ``(ny, nx)`` array."""
        return np.asarray(values).reshape(self.ny, self.nx)


def build_mesh(x_range, y_range, nx, ny):
    x_range = tuple(float(v) for v in x_range)
    y_range = tuple(float(v) for v in y_range)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigurationError(f"cell counts must be positive integers, got {nx}x{ny}")
    if not x_range[1] > x_range[0] or not y_range[1] > y_range[0]:
        raise ConfigurationError(f"degenerate domain {x_range} x {y_range}")
    return SpatialMesh(x_range, y_range, int(nx), int(ny))


@dataclass(frozen=True)
class DgOperators:
    """Assembled spatial matrices, all ``n_dof x n_dof`` CSR."""

    mesh: SpatialMesh
    bc: BoundaryCondition
    mass: sp.csr_matrix
    sigma_s_mat: sp.csr_matrix
    sigma_a_mat: sp.csr_matrix
    dxm: sp.csr_matrix
    dxp: sp.csr_matrix
    dym: sp.csr_matrix
    dyp: sp.csr_matrix
    djump: sp.csr_matrix
    alpha_x: float
    alpha_y: float
    sigma_s: np.ndarray
    sigma_a: np.ndarray

    @property
    def n_dof(self):
        return self.mesh.n_dof

    @property
    def mass_diag(self):
        return self.mass.diagonal()


def _csr(mat):
    mat = sp.csr_matrix(mat)
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _minus_difference_1d(n, periodic):
    """``(u_i - u_{i-1})`` stencil; the exterior value is zero unless periodic."""
    rows = list(range(n)) + list(range(1, n))
    cols = list(range(n)) + list(range(0, n - 1))
    vals = [1.0] * n + [-1.0] * (n - 1)
    if periodic:
        rows.append(0)
        cols.append(n - 1)
        vals.append(-1.0)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n))


def _plus_difference_1d(n, periodic):
    """``(u_{i+1} - u_i)`` stencil."""
    rows = list(range(n)) + list(range(0, n - 1))
    cols = list(range(n)) + list(range(1, n))
    vals = [-1.0] * n + [1.0] * (n - 1)
    if periodic:
        rows.append(n - 1)
        cols.append(0)
        vals.append(1.0)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n))


def sample_field(mesh, field):
    """Evaluate a scalar, callable ``f(x, y)`` or per-cell array at cell centers."""
    if callable(field):
        xc, yc = mesh.cell_centers()
        values = np.asarray(field(xc, yc), dtype=float)
        return np.broadcast_to(values, (mesh.n_dof,)).copy()
    values = np.asarray(field, dtype=float)
    if values.ndim == 0:
        return np.full(mesh.n_dof, float(values))
    if values.shape != (mesh.n_dof,):
        raise ConfigurationError(f"field has shape {values.shape}, expected ({mesh.n_dof},)")
    return values.copy()


def assemble_operators(mesh, sigma_s_field, sigma_a_field, bc="vacuum",
                       alpha_x=3.0, alpha_y=3.0, degree=0):
    if degree != 0:
        raise NotImplementedError("only piecewise constants (degree 0) are implemented")
    bc = BoundaryCondition(bc)
    if not (alpha_x > 0 and alpha_y > 0):
        raise ConfigurationError("jump penalties alpha_x, alpha_y must be positive")
    sigma_s = sample_field(mesh, sigma_s_field)
    sigma_a = sample_field(mesh, sigma_a_field)
    if np.any(sigma_s < 0) or np.any(sigma_a < 0):
        raise ModelError("cross sections must be non-negative in every cell")

    periodic = bc is BoundaryCondition.PERIODIC
    ix = sp.identity(mesh.nx, format="csr")
    iy = sp.identity(mesh.ny, format="csr")
    dxm = _csr(mesh.dy * sp.kron(iy, _minus_difference_1d(mesh.nx, periodic)))
    dxp = _csr(mesh.dy * sp.kron(iy, _plus_difference_1d(mesh.nx, periodic)))
    dym = _csr(mesh.dx * sp.kron(_minus_difference_1d(mesh.ny, periodic), ix))
    dyp = _csr(mesh.dx * sp.kron(_plus_difference_1d(mesh.ny, periodic), ix))
    djump = _csr(alpha_x * (dxm - dxp) + alpha_y * (dym - dyp))

    area = mesh.cell_area
    return DgOperators(
        mesh=mesh,
        bc=bc,
        mass=_csr(sp.diags(np.full(mesh.n_dof, area))),
        sigma_s_mat=_csr(sp.diags(area * sigma_s)),
        sigma_a_mat=_csr(sp.diags(area * sigma_a)),
        dxm=dxm, dxp=dxp, dym=dym, dyp=dyp,
        djump=djump,
        alpha_x=float(alpha_x),
        alpha_y=float(alpha_y),
        sigma_s=sigma_s,
        sigma_a=sigma_a,
    )


def upwind_derivative(ops, v_x, v_y):
    """``v_x D_x^* + v_y D_y^*`` with the minus operator for non-negative components."""
    dx = ops.dxm if v_x >= 0 else ops.dxp
    dy = ops.dym if v_y >= 0 else ops.dyp
    return _csr(v_x * dx + v_y * dy)
