import math

import numpy as np
import pytest

from mmrbm.metrics import METRIC_COLUMNS, MetricAccumulator, compression_ratio, error_metrics


def history(levels, n_dof=4, n_dir=2, seed=0):
    rng = np.random.default_rng(seed)
    return {"rho": rng.standard_normal((levels, n_dof)),
            "vf": rng.standard_normal((levels, 2, n_dof)),
            "f": rng.standard_normal((levels, n_dof, n_dir))}


def test_identical_histories_have_zero_error():
    h = history(5)
    m = error_metrics(h, h, 0.1, 0.25)
    for key in METRIC_COLUMNS[:-1]:
        assert getattr(m, key) == 0.0


def test_zero_reduced_solution_has_unit_relative_error():
    ref = history(4)
    zero = {k: np.zeros_like(v) for k, v in ref.items()}
    m = error_metrics(zero, ref, 0.1, 0.25)
    assert m.R_rho == pytest.approx(1.0, rel=1e-15)
    assert m.R_vf == pytest.approx(1.0, rel=1e-15)
    assert m.R_f == pytest.approx(1.0, rel=1e-15)


def test_hand_evaluated_single_step():
    dt, area = 0.5, 0.25
    fom = {"rho": np.array([[9.0, 9, 9, 9], [1, 2, 3, 4]]),
           "f": np.array([np.zeros((4, 2)), [[1, 0], [0, 0], [0, 0], [0, 2]]], dtype=float)}
    rom = {"rho": np.array([[0.0, 0, 0, 0], [1, 2, 3, 5]]),
           "f": np.array([np.zeros((4, 2)), [[1, 0], [0, 0], [0, 0], [0, 0]]], dtype=float)}
    m = error_metrics(rom, fom, dt, area)
    # level 0 is excluded; the rho error is one unit in one cell
    assert m.E_rho == pytest.approx(math.sqrt(dt * area * 1.0), rel=1e-15)
    assert m.R_rho == pytest.approx(math.sqrt(1.0 / 30.0), rel=1e-15)
    # direction 0 is exact, direction 1 is entirely wrong: numerator and reference maxed separately
    assert m.E_f == pytest.approx(math.sqrt(dt * area * 4.0), rel=1e-15)
    assert m.R_f == pytest.approx(1.0, rel=1e-15)
    assert m.E_vf == 0.0  # no moment data on either side


def test_streaming_matches_batch():
    a, b = history(6, seed=1), history(6, seed=2)
    acc = MetricAccumulator(0.2, 0.5)
    for n in range(6):
        acc.add(n, a["rho"][n], b["rho"][n], a["vf"][n], b["vf"][n], a["f"][n], b["f"][n])
    assert acc.result().as_row() == error_metrics(a, b, 0.2, 0.5).as_row()
    assert acc.levels == 5


def test_mismatched_histories():
    with pytest.raises(ValueError):
        error_metrics(history(3), history(4), 0.1, 1.0)
    a, b = history(3), history(3)
    del a["f"]
    with pytest.raises(ValueError):
        error_metrics(a, b, 0.1, 1.0)


def test_compression_ratio_definition():
    assert compression_ratio(3, 10, 30, 110, 1600) == (3 + 30 * 10) / (111 * 1600)
