"""Benchmark problem presets at paper and desk scale."""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .fom import ProblemDefinition
from .greedy import GreedyConfig
from .mesh import build_mesh

PRESET_NAMES = ("homogeneous", "anisotropic", "multiscale", "lattice")
SCALES = ("paper", "desk")

DESK_MESH = 40
DESK_TRAIN = 110
DESK_TEST = 194
PAPER_TRAIN = 590
PAPER_TEST = 2030  # largest embedded Lebedev rule


@dataclass
class Preset:
    name: str
    scale: str
    problem: ProblemDefinition
    x_range: tuple
    y_range: tuple
    nx: int
    ny: int
    n_train: int
    n_test: int
    config: GreedyConfig

    @property
    def mesh(self):
        return build_mesh(self.x_range, self.y_range, self.nx, self.ny)

    def with_(self, **changes):
        return replace(self, **changes)


# ------------------------------------------------------------ problem data


def gaussian_source(x, y):
    return np.exp(-100.0 * ((x - 1.0) ** 2 + (y - 1.0) ** 2))


def bump_density(x, y):
    r2 = x**2 + y**2
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 0.5
    out[inside] = np.exp(-1.0 / (0.5 - r2[inside]))
    return out


def anisotropic_profile(nodes):
    """Angular factor of the anisotropic initial ``g``; azimuth from ``atan2``."""
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    vx, vy = nodes[:, 0], nodes[:, 1]
    phi = np.arctan2(vy, vx)
    u = np.zeros(nodes.shape[0])
    first = (vx > 0) & (vy > 0)
    third = (vx < 0) & (vy < 0)
    u[first] = np.exp(-1.0 / (math.pi**2 / 16.0 - (phi[first] - math.pi / 4.0) ** 2))
    u[third] = -np.exp(-1.0 / (9.0 * math.pi**2 / 16.0 - (phi[third] + 3.0 * math.pi / 4.0) ** 2))
    return u


def anisotropic_g0(x, y, nodes):
    return np.outer(bump_density(x, y), anisotropic_profile(nodes))


def multiscale_sigma_s(x, y):
    r = np.sqrt(x**2 + y**2)
    s2 = math.sqrt(2.0)
    inner = 0.999 * r**4 * (r + s2) ** 2 * (r - s2) ** 2 + 0.001
    return np.where(r < 1.0, inner, 1.0)


def multiscale_rho0(x, y):
    return 5.0 / math.pi * np.exp(-25.0 * (x**2 + y**2))


# absorber blocks of the lattice, as lower-left corners of unit squares
LATTICE_ABSORBERS = ((1.0, 1.0), (1.0, 3.0), (3.0, 1.0), (3.0, 3.0))


def lattice_absorber_mask(x, y):
    mask = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    for x0, y0 in LATTICE_ABSORBERS:
        mask |= (x > x0) & (x < x0 + 1.0) & (y > y0) & (y < y0 + 1.0)
    return mask


def lattice_sigma_s(x, y):
    return np.where(lattice_absorber_mask(x, y), 0.0, 1.0)


def lattice_sigma_a(x, y):
    return np.where(lattice_absorber_mask(x, y), 100.0, 0.0)


def lattice_source(x, y):
    return np.where((np.abs(x - 2.5) < 0.5) & (np.abs(y - 2.5) < 0.5), 1.0, 0.0)


# ------------------------------------------------------------ constructor


def homogeneous_final_time(epsilon):
    return 0.25 if epsilon >= 0.1 else 1.5


def preset(name, scale="desk", epsilon=None, sigma_s=None):
    """Build a preset; ``epsilon`` and ``sigma_s`` override the defaults where meaningful."""
    if scale not in SCALES:
        raise ConfigurationError(f"unknown scale {scale!r}; choose from {SCALES}")
    desk = scale == "desk"
    n_train = DESK_TRAIN if desk else PAPER_TRAIN
    n_test = DESK_TEST if desk else PAPER_TEST

    if name == "homogeneous":
        eps = 1.0 if epsilon is None else float(epsilon)
        problem = ProblemDefinition(eps, homogeneous_final_time(eps),
                                    sigma_s=1.0 if sigma_s is None else sigma_s,
                                    sigma_a=0.0, source=gaussian_source)
        n = DESK_MESH if desk else 80
        return Preset(name, scale, problem, (0.0, 2.0), (0.0, 2.0), n, n, n_train, n_test,
                      GreedyConfig(1e-4, 0.01, 0.02, initial_lebedev_points=26))
    if name == "anisotropic":
        eps = 1.0 if epsilon is None else float(epsilon)
        problem = ProblemDefinition(eps, 0.5, sigma_s=1.0 if sigma_s is None else sigma_s,
                                    sigma_a=0.0, initial_rho=bump_density,
                                    initial_g=anisotropic_g0)
        n = DESK_MESH if desk else 80
        return Preset(name, scale, problem, (-1.0, 1.0), (-1.0, 1.0), n, n, n_train, n_test,
                      GreedyConfig(1e-4, 0.0125, 0.0125, initial_lebedev_points=26))
    if name == "multiscale":
        eps = 0.01 if epsilon is None else float(epsilon)
        problem = ProblemDefinition(eps, 0.05, sigma_s=multiscale_sigma_s if sigma_s is None
                                    else sigma_s, sigma_a=0.0, initial_rho=multiscale_rho0)
        n = DESK_MESH if desk else 80
        return Preset(name, scale, problem, (-1.0, 1.0), (-1.0, 1.0), n, n, n_train, n_test,
                      GreedyConfig(1e-4, 0.015, 0.025, initial_lebedev_points=50))
    if name == "lattice":
        eps = 1.0 if epsilon is None else float(epsilon)
        problem = ProblemDefinition(eps, 1.7, sigma_s=lattice_sigma_s if sigma_s is None
                                    else sigma_s, sigma_a=lattice_sigma_a, source=lattice_source)
        n = DESK_MESH if desk else 100
        return Preset(name, scale, problem, (0.0, 5.0), (0.0, 5.0), n, n, n_train, n_test,
                      GreedyConfig(1e-3, 0.015, 0.03, initial_lebedev_points=50))
    raise ConfigurationError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
