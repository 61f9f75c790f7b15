"""Time-accumulated L2 error metrics and the compression ratio."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

METRIC_COLUMNS = ("E_rho", "R_rho", "E_vf", "R_vf", "E_f", "R_f", "compression_ratio")


@dataclass
class RunMetrics:
    E_rho: float
    R_rho: float
    E_vf: float
    R_vf: float
    E_f: float
    R_f: float
    compression_ratio: float = math.nan
    wall_times: dict = field(default_factory=dict)

    def as_row(self):
        d = asdict(self)
        return {k: d[k] for k in METRIC_COLUMNS}


def compression_ratio(r_rho, r_g, nv_rq, nv_train, n_dof):
    """Reduced DOFs over the DOFs of the full model on the training set."""
    return (r_rho + nv_rq * r_g) / ((nv_train + 1) * n_dof)


class MetricAccumulator:
    """Streams per-level differences; levels ``n >= 1`` enter the sums.

    ``vf`` arrays have shape ``(2, n_dof)`` (in-plane components) and ``f``
    arrays ``(n_dof, n_directions)``.
    """

    def __init__(self, dt, cell_area):
        self.dt = float(dt)
        self.area = float(cell_area)
        self.levels = 0
        self.err_rho = self.ref_rho = 0.0
        self.err_vf = self.ref_vf = 0.0
        self.err_f = self.ref_f = None

    def add(self, n, rho_rom, rho_fom, vf_rom=None, vf_fom=None, f_rom=None, f_fom=None):
        if n == 0:
            return
        self.levels += 1
        a = self.area
        self.err_rho += a * np.sum((rho_rom - rho_fom) ** 2)
        self.ref_rho += a * np.sum(rho_fom**2)
        if vf_fom is not None:
            self.err_vf += a * np.sum((vf_rom - vf_fom) ** 2)
            self.ref_vf += a * np.sum(vf_fom**2)
        if f_fom is not None:
            err = a * np.sum((f_rom - f_fom) ** 2, axis=0)
            ref = a * np.sum(f_fom**2, axis=0)
            if self.err_f is None:
                self.err_f, self.ref_f = err, ref
            else:
                self.err_f = self.err_f + err
                self.ref_f = self.ref_f + ref

    def result(self):
        dt = self.dt

        def pair(err, ref):
            e = math.sqrt(dt * err)
            r = e / math.sqrt(dt * ref) if ref > 0 else (0.0 if err == 0 else math.inf)
            return e, r

        e_rho, r_rho = pair(self.err_rho, self.ref_rho)
        e_vf, r_vf = pair(self.err_vf, self.ref_vf)
        if self.err_f is None:
            e_f = r_f = math.nan
        else:
            e_f, r_f = pair(float(np.max(self.err_f)), float(np.max(self.ref_f)))
        return RunMetrics(e_rho, r_rho, e_vf, r_vf, e_f, r_f)


def error_metrics(rom_outputs, fom_reference, dt, cell_area):
    """Metrics from whole histories.

    Both arguments are mappings with ``"rho"`` of shape ``(levels, n_dof)`` and
    optionally ``"vf"`` ``(levels, 2, n_dof)`` and ``"f"``
    ``(levels, n_dof, n_directions)``.
    """
    rho_r, rho_f = np.asarray(rom_outputs["rho"]), np.asarray(fom_reference["rho"])
    if rho_r.shape != rho_f.shape:
        raise ValueError(f"time grid or mesh mismatch: {rho_r.shape} vs {rho_f.shape}")
    acc = MetricAccumulator(dt, cell_area)
    vf_r, vf_f = rom_outputs.get("vf"), fom_reference.get("vf")
    f_r, f_f = rom_outputs.get("f"), fom_reference.get("f")
    for name, a, b in (("vf", vf_r, vf_f), ("f", f_r, f_f)):
        if (a is None) != (b is None) or (a is not None and np.shape(a) != np.shape(b)):
            raise ValueError(f"{name} histories do not match")
    for n in range(rho_r.shape[0]):
        acc.add(n, rho_r[n], rho_f[n],
                None if vf_r is None else vf_r[n], None if vf_f is None else vf_f[n],
                None if f_r is None else f_r[n], None if f_f is None else f_f[n])
    return acc.result()
