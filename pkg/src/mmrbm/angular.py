"""Angular quadrature on the unit sphere.

Embedded Lebedev rules, real spherical harmonics and the least-squares
reduced quadrature with its non-negative-weight fallback.
"""

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np
from scipy.special import sph_harm_y

from .errors import QuadratureError

LEBEDEV_DEGREES = {6: 3, 26: 7, 50: 11, 110: 17, 194: 23, 302: 29, 590: 41, 2030: 77}

SQRT_4PI = math.sqrt(4.0 * math.pi)


class Provenance(str, Enum):
    LEBEDEV = "lebedev_table"
    REDUCED_LS = "reduced_ls"
    FALLBACK = "fallback_zero_padded"


class ExactnessWarning(UserWarning):
    """The harmonic interpolation matrix is rank deficient."""


@dataclass(frozen=True, eq=False)
class AngularQuadrature:
    nodes: np.ndarray  # (N, 3) unit vectors
    weights: np.ndarray  # (N,)
    exactness_degree: int
    provenance: Provenance

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 3)
        weights = np.ascontiguousarray(self.weights, dtype=float).reshape(-1)
        if nodes.shape[0] != weights.shape[0]:
            raise QuadratureError("node and weight counts differ")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self):
        return self.weights.shape[0]

    @property
    def vx(self):
        return self.nodes[:, 0]

    @property
    def vy(self):
        return self.nodes[:, 1]

    @property
    def vz(self):
        return self.nodes[:, 2]

    def moment(self, samples):
        """Weighted sum over nodes along the last axis of ``samples``."""
        return discrete_moment(self, samples)

    def second_moments(self):
        """3x3 matrix of ``<v_a v_b>_h``."""
        return (self.nodes * self.weights[:, None]).T @ self.nodes

    def check(self, atol=1e-12):
        """Raise if a hard invariant (unit nodes, w >= 0, sum w = 1) is violated."""
        if np.any(np.abs(np.linalg.norm(self.nodes, axis=1) - 1.0) > atol):
            raise QuadratureError("quadrature nodes are not unit vectors")
        if np.any(self.weights < 0):
            raise QuadratureError("negative quadrature weight")
        if abs(self.weights.sum() - 1.0) > atol:
            raise QuadratureError(f"weights sum to {self.weights.sum()!r}, not 1")

    def index_of(self, v, atol=1e-12):
        """Index of node ``v`` or ``None``."""
        d = np.max(np.abs(self.nodes - np.asarray(v, dtype=float)), axis=1)
        k = int(np.argmin(d))
        return k if d[k] <= atol else None

    def to_text(self):
        lines = [f"# exactness={self.exactness_degree} provenance={self.provenance.value}"]
        for v, w in zip(self.nodes, self.weights):
            lines.append(" ".join(repr(float(a)) for a in (*v, w)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        degree, provenance = 0, Provenance.REDUCED_LS
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    if key == "exactness":
                        degree = int(value)
                    elif key == "provenance":
                        provenance = Provenance(value)
                continue
            rows.append([float(t) for t in line.split()])
        data = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(data[:, :3], data[:, 3], degree, provenance)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def lebedev(points_requested):
    n = int(points_requested)
    if n not in LEBEDEV_DEGREES:
        raise QuadratureError(
            f"no embedded Lebedev rule with {n} points; available: {sorted(LEBEDEV_DEGREES)}")
    text = resources.files("mmrbm.data").joinpath(f"lebedev_{n:04d}.txt").read_text()
    return AngularQuadrature.from_text(text)


def to_spherical(nodes):
    """Polar angle from +z and azimuth from +x in [0, 2 pi)."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    theta = np.arccos(np.clip(nodes[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(nodes[:, 1], nodes[:, 0]), 2.0 * np.pi)
    return theta, phi


def real_spherical_harmonic(m, l, theta, phi):
    """Orthonormal real harmonic of degree ``m`` and order ``l`` (no Condon-Shortley phase)."""
    if m < 0 or abs(l) > m or int(m) != m or int(l) != l:
        raise ValueError(f"invalid harmonic index (m={m}, l={l})")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    y = sph_harm_y(int(m), abs(int(l)), theta, phi)
    if l == 0:
        return y.real
    # scipy includes the (-1)^l phase; multiplying by it again removes it
    sign = -1.0 if l % 2 else 1.0
    if l > 0:
        return math.sqrt(2.0) * sign * y.real
    return math.sqrt(2.0) * sign * y.imag


def harmonic_index(m, l):
    """Flat 1-based column index ``m^2 + l + m + 1``."""
    return m * m + l + m + 1


def harmonic_matrix(nodes, M):
    """Interpolation matrix with entry ``(i, j) = Y_{m,l}(v_i)``."""
    theta, phi = to_spherical(nodes)
    mat = np.empty((theta.size, (M + 1) ** 2))
    for m in range(M + 1):
        for l in range(-m, m + 1):
            mat[:, harmonic_index(m, l) - 1] = real_spherical_harmonic(m, l, theta, phi)
    return mat


def discrete_moment(quad, samples_per_node):
    samples = np.asarray(samples_per_node, dtype=float)
    if samples.shape[-1] != len(quad):
        raise ValueError(f"expected {len(quad)} samples per node, got {samples.shape[-1]}")
    return samples @ quad.weights


def ls_quadrature_weights(nodes, M, rcond=1e-12):
    """Weights from the first row of the pseudo-inverse of the harmonic matrix.

    A :class:`ExactnessWarning` is issued when the matrix loses column rank,
    in which case the degree-``M`` exactness is not certified.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    if M < 3:
        raise QuadratureError("reduced quadrature degree must be at least 3")
    if (M + 1) ** 2 > nodes.shape[0]:
        raise QuadratureError(
            f"degree {M} needs {(M + 1) ** 2} nodes, only {nodes.shape[0]} given")
    mat = harmonic_matrix(nodes, M)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    keep = s > rcond * s[0]
    if not np.all(keep):
        warnings.warn(f"harmonic matrix rank {keep.sum()} < {mat.shape[1]} at degree {M}",
                      ExactnessWarning, stacklevel=2)
    # first row of V S^+ U^T
    first_row = (vt[keep, 0] / s[keep]) @ u[:, keep].T
    return first_row / SQRT_4PI


def nonneg_reduced_quadrature(new_nodes, old_quad, M_min=3, M_max=7):
    """Non-negative reduced rule on ``new_nodes``, falling back to zero-padded old weights."""
    new_nodes = np.asarray(new_nodes, dtype=float).reshape(-1, 3)
    if np.any(old_quad.weights < 0):
        raise QuadratureError("previous quadrature has negative weights")
    if M_min < 3 or M_max < M_min:
        raise QuadratureError(f"invalid degree range [{M_min}, {M_max}]")
    if (M_min + 1) ** 2 > new_nodes.shape[0]:
        raise QuadratureError(
            f"degree {M_min} needs {(M_min + 1) ** 2} nodes, only {new_nodes.shape[0]} given")

    for M in range(M_max, M_min - 1, -1):
        if (M + 1) ** 2 > new_nodes.shape[0]:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", ExactnessWarning)
            try:
                weights = ls_quadrature_weights(new_nodes, M)
            except ExactnessWarning:
                continue
        if np.all(weights >= 0):
            return AngularQuadrature(new_nodes, weights, M, Provenance.REDUCED_LS)

    weights = np.zeros(new_nodes.shape[0])
    for k, v in enumerate(new_nodes):
        j = old_quad.index_of(v)
        if j is not None:
            weights[k] = old_quad.weights[j]
    return AngularQuadrature(new_nodes, weights, old_quad.exactness_degree, Provenance.FALLBACK)


def certify_exactness(quad, degree):
    """Largest harmonic moment error over degrees ``1..degree`` and the ``Y_00`` error."""
    mat = harmonic_matrix(quad.nodes, degree)
    moments = quad.weights @ mat
    return float(np.max(np.abs(moments[1:]), initial=0.0)), abs(moments[0] - 1.0 / SQRT_4PI)
