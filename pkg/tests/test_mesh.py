import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrbm.errors import ConfigurationError, ModelError
from mmrbm.mesh import assemble_operators, build_mesh, upwind_derivative
from oracles import hand_stencil


@pytest.mark.parametrize("args, n_dof, h", [
    (([0, 2], [0, 2], 80, 80), 6400, 0.025),
    (([0, 1], [0, 1], 1, 1), 1, 1.0),
    (([-1, 1], [-1, 1], 4, 2), 8, 0.5),
])
def test_build_mesh_sizes(args, n_dof, h):
    mesh = build_mesh(*args)
    assert mesh.n_dof == n_dof
    assert mesh.h == pytest.approx(h, rel=1e-15)


@pytest.mark.parametrize("args", [
    ([0, 1], [0, 1], 0, 3),
    ([0, 1], [0, 1], 2.5, 3),
    ([1, 1], [0, 1], 2, 2),
    ([0, 1], [2, 0], 2, 2),
])
def test_build_mesh_rejects_bad_input(args):
    with pytest.raises(ConfigurationError):
        build_mesh(*args)


def test_cell_numbering_is_x_fastest():
    mesh = build_mesh([0, 3], [0, 2], 3, 2)
    xc, yc = mesh.cell_centers()
    assert np.allclose(xc, [0.5, 1.5, 2.5, 0.5, 1.5, 2.5])
    assert np.allclose(yc, [0.5, 0.5, 0.5, 1.5, 1.5, 1.5])


@pytest.mark.parametrize("bc", ["vacuum", "periodic"])
@pytest.mark.parametrize("shape", [(1, 1), (2, 3), (4, 4), (5, 2)])
def test_operators_match_hand_stencil(bc, shape):
    mesh = build_mesh([0, 1.5], [-1, 1], *shape)
    ops = assemble_operators(mesh, 1.0, 0.0, bc)
    ref = hand_stencil(mesh, bc == "periodic")
    for mat, expected in zip((ops.dxm, ops.dxp, ops.dym, ops.dyp), ref):
        assert np.array_equal(mat.toarray(), expected)


def test_single_cell_vacuum_keeps_only_boundary_traces():
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 1, 1), 1.0, 0.0, "vacuum")
    assert ops.dxm.toarray()[0, 0] == 1.0
    assert ops.dxp.toarray()[0, 0] == -1.0
    assert np.array_equal(ops.dxp.toarray(), -ops.dxm.toarray().T)


def test_periodic_constant_in_kernel():
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 4, 4), 1.0, 0.0, "periodic")
    u = np.ones(16)
    for mat in (ops.dxm, ops.dxp, ops.dym, ops.dyp):
        assert np.max(np.abs(mat @ u)) == 0.0


def test_upwind_branch_selection():
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 3, 3), 1.0, 0.0)
    assert upwind_derivative(ops, 0.0, 0.0).count_nonzero() == 0
    expected = (ops.dxm - ops.dyp).toarray()
    assert np.array_equal(upwind_derivative(ops, 1.0, -1.0).toarray(), expected)
    assert np.array_equal(upwind_derivative(ops, -0.3, 0.0).toarray(), (-0.3 * ops.dxp).toarray())


def test_matrices_are_canonical_csr():
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 4, 3), 1.0, 0.0)
    for mat in (ops.mass, ops.dxm, ops.dxp, ops.dym, ops.dyp, ops.djump):
        assert mat.format == "csr" and mat.has_sorted_indices and mat.has_canonical_format


def test_material_matrices_are_weighted_diagonals():
    mesh = build_mesh([0, 2], [0, 1], 4, 2)
    ops = assemble_operators(mesh, lambda x, y: x, 2.0)
    xc, _ = mesh.cell_centers()
    assert np.allclose(ops.mass.toarray(), mesh.cell_area * np.eye(8))
    assert np.allclose(ops.sigma_s_mat.diagonal(), mesh.cell_area * xc)
    assert np.allclose(ops.sigma_a_mat.diagonal(), 2.0 * mesh.cell_area)


def test_rejects_negative_cross_section_and_higher_degree():
    mesh = build_mesh([0, 1], [0, 1], 2, 2)
    with pytest.raises(ModelError):
        assemble_operators(mesh, -1.0, 0.0)
    with pytest.raises(NotImplementedError):
        assemble_operators(mesh, 1.0, 0.0, degree=1)
    with pytest.raises(ConfigurationError):
        assemble_operators(mesh, [1.0, 2.0], 0.0)


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(1, 8), ny=st.integers(1, 8), periodic=st.booleans(),
       ax=st.floats(0.5, 5.0), ay=st.floats(0.5, 5.0))
def test_transpose_duality_and_jump_psd(nx, ny, periodic, ax, ay):
    mesh = build_mesh([0, 1], [0, 2], nx, ny)
    ops = assemble_operators(mesh, 1.0, 0.0, "periodic" if periodic else "vacuum", ax, ay)
    assert np.max(np.abs((ops.dxp + ops.dxm.T).toarray()), initial=0) <= 1e-14
    assert np.max(np.abs((ops.dyp + ops.dym.T).toarray()), initial=0) <= 1e-14
    J = ops.djump.toarray()
    expected = ax * (ops.dxm - ops.dxp) + ay * (ops.dym - ops.dyp)
    assert np.array_equal(J, expected.toarray())
    assert np.max(np.abs(J - J.T)) <= 1e-14
    assert np.linalg.eigvalsh(J).min() >= -1e-12


def test_first_order_consistency():
    """Weak D_x^- on cell averages of sin(pi x)cos(pi y) approaches M times the x derivative."""
    errors, hs = [], []
    for n in (8, 16, 32):
        mesh = build_mesh([0, 2], [0, 2], n, n)
        ops = assemble_operators(mesh, 1.0, 0.0, "periodic")
        xe, ye = mesh.x_edges(), mesh.y_edges()
        # exact cell averages
        ax = (np.cos(np.pi * xe[:-1]) - np.cos(np.pi * xe[1:])) / (np.pi * mesh.dx)
        ay = (np.sin(np.pi * ye[1:]) - np.sin(np.pi * ye[:-1])) / (np.pi * mesh.dy)
        dax = (np.sin(np.pi * xe[1:]) - np.sin(np.pi * xe[:-1])) / mesh.dx  # average of d/dx
        u = np.outer(ay, ax).ravel()
        du = np.outer(ay, dax).ravel()
        err = (ops.dxm @ u) / mesh.cell_area - du
        errors.append(np.sqrt(mesh.cell_area * np.sum(err**2)))
        hs.append(mesh.h)
    orders = np.diff(np.log(errors)) / np.diff(np.log(hs))
    assert np.all(orders >= 0.9)
