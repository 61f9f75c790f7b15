import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrbm.angular import AngularQuadrature, lebedev
from mmrbm.errors import ConfigurationError, NumericalError
from mmrbm.fom import ProblemDefinition, fom_solve, operators_for, theta_diagonal
from mmrbm.mesh import assemble_operators, build_mesh
from mmrbm.rom import (ReducedBasis, RomState, expand_f, load_model, model_from_bytes,
                       model_to_bytes, predict_unseen, project_operators, reconstruct_moments,
                       rom_solve, rom_step, save_model)
from mmrbm.snapshots import MemorySink
from oracles import projected_monolithic_step, relative


def orthonormal(rng, n, r):
    return ReducedBasis.from_snapshots(rng.standard_normal((n, r)))


def problem_4x4(epsilon=0.1):
    return ProblemDefinition(epsilon=epsilon, final_time=0.1, sigma_s=lambda x, y: 1 + x,
                             sigma_a=0.1, source=lambda x, y: np.exp(-4 * (x - 0.5) ** 2),
                             initial_rho=lambda x, y: 1 + np.sin(np.pi * x) * y)


@pytest.fixture(scope="module")
def full_span():
    """FOM run on 4x4 cells with 26 nodes, plus bases spanning every snapshot."""
    mesh = build_mesh([0, 1], [0, 1], 4, 4)
    quad = lebedev(26)
    problem = problem_4x4()
    ops = operators_for(problem, mesh, quad)
    sink = MemorySink()
    res = fom_solve(problem, mesh, quad, snapshot_sink=sink, ops=ops, dt=0.01, solver="direct")
    levels = sorted(sink.rho)
    Br = ReducedBasis.from_snapshots(np.column_stack([sink.rho[n] for n in levels]))
    Bg = ReducedBasis.from_snapshots(np.hstack([sink.g[n] for n in levels[1:]]))
    model = project_operators(ops, Br, Bg, quad, problem.epsilon, res.dt,
                              source=problem.source_vector(mesh), n_steps=res.n_steps)
    return dict(mesh=mesh, quad=quad, problem=problem, ops=ops, sink=sink, res=res, model=model)


def test_identity_projection_reproduces_full_operators():
    mesh = build_mesh([0, 1], [0, 1], 2, 2)
    quad = lebedev(26)
    ops = assemble_operators(mesh, 1.0, 0.2)
    model = project_operators(ops, ReducedBasis.identity(4), ReducedBasis.identity(4), quad,
                              0.1, 0.01)
    assert np.array_equal(model.dxp_rg, ops.dxp.toarray())
    assert np.array_equal(model.dym_gr, ops.dym.toarray())
    assert np.array_equal(model.up_xp, ops.dxp.toarray())
    assert np.allclose(model.theta_g, np.diag(theta_diagonal(ops, 0.1, 0.01)), rtol=1e-15)
    assert np.array_equal(model.mass_rho, ops.mass.toarray())


def test_constant_basis_has_unit_mass():
    mesh = build_mesh([0, 2], [0, 2], 2, 2)  # unit cell area
    ops = assemble_operators(mesh, 1.0, 0.0)
    b = ReducedBasis.from_snapshots(np.ones((4, 1)))
    model = project_operators(ops, b, ReducedBasis.identity(4), lebedev(26), 1.0, 0.01)
    assert model.mass_rho.shape == (1, 1)
    assert model.mass_rho[0, 0] == pytest.approx(1.0, rel=1e-15)


def test_reduced_schur_matches_term_by_term_projection():
    rng = np.random.default_rng(5)
    mesh = build_mesh([0, 1], [0, 1], 3, 3)
    quad = lebedev(26)
    ops = assemble_operators(mesh, lambda x, y: 1 + y, 0.3)
    Br, Bg = orthonormal(rng, 9, 4), orthonormal(rng, 9, 6)
    eps, dt = 0.1, 0.02
    model = project_operators(ops, Br, Bg, quad, eps, dt)
    B, G = Br.B, Bg.B
    theta = np.diag(theta_diagonal(ops, eps, dt))
    tinv = np.linalg.inv(G.T @ theta @ G)
    H = B.T @ (ops.mass + dt * ops.sigma_a_mat + dt * ops.djump).toarray() @ B
    for j in range(len(quad)):
        vx, vy = quad.nodes[j, 0], quad.nodes[j, 1]
        up = B.T @ (vx * ops.dxp + vy * ops.dyp).toarray() @ G
        down = G.T @ (vx * ops.dxm + vy * ops.dym).toarray() @ B
        H -= dt**2 * quad.weights[j] * up @ tinv @ down
    assert relative(model.h_matrix(quad), H) <= 1e-10
    assert np.max(np.abs(model.dxp_rg + model.dxm_gr.T)) <= 1e-10
    assert np.max(np.abs(model.dyp_rg + model.dym_gr.T)) <= 1e-10


@pytest.mark.parametrize("shape", [(1, 1), (2, 2), (3, 3), (3, 2)])
@pytest.mark.parametrize("n_nodes", [6, 26])
@pytest.mark.parametrize("epsilon", [1.0, 0.1, 0.005])
def test_reduced_step_equals_projected_monolithic_solve(shape, n_nodes, epsilon):
    rng = np.random.default_rng(11 * shape[0] + shape[1] + n_nodes)
    mesh = build_mesh([0, 1], [0, 1], *shape)
    quad = lebedev(n_nodes)
    ops = assemble_operators(mesh, lambda x, y: 1 + x, 0.2)
    n = mesh.n_dof
    Br = orthonormal(rng, n, max(1, n - 1))
    Bg = orthonormal(rng, n, n)
    source = mesh.cell_area * (1 + np.arange(n, dtype=float))
    dt = 0.01
    model = project_operators(ops, Br, Bg, quad, epsilon, dt, source=source)
    state = RomState(rng.standard_normal(Br.rank), rng.standard_normal((Bg.rank, n_nodes)))
    new = rom_step(state, model, quad)
    c_rho, c_g = projected_monolithic_step(ops, quad, epsilon, dt, Br.B, Bg.B,
                                           state.c_rho, state.c_g, source)
    assert relative(new.c_rho, c_rho) <= 1e-10
    assert relative(new.c_g, c_g) <= 1e-10


def test_zero_state_stays_zero():
    rng = np.random.default_rng(0)
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 3, 3), 1.0, 0.0)
    quad = lebedev(26)
    model = project_operators(ops, orthonormal(rng, 9, 3), orthonormal(rng, 9, 5), quad, 1.0, 0.01)
    new = rom_step(RomState(np.zeros(3), np.zeros((5, 26))), model, quad)
    assert not np.any(new.c_rho) and not np.any(new.c_g)


def test_galerkin_reproduction(full_span):
    d = full_span
    model, sink = d["model"], d["sink"]
    state = model.project_initial(d["problem"].rho0(d["mesh"]), d["problem"].g0(d["mesh"],
                                                                                d["quad"].nodes))
    traj = rom_solve(model, state, model.n_steps, d["quad"], keep_g=True)
    rho = reconstruct_moments(model, traj, 0)
    for n in range(model.n_steps + 1):
        assert relative(rho[n], sink.rho[n]) <= 1e-8
        assert relative(model.basis_g.B @ traj.c_g[n], sink.g[n]) <= 1e-8


def test_zero_steps_echo_initial_state(full_span):
    model = full_span["model"]
    state = RomState(np.ones(model.r_rho), np.ones((model.r_g, 26)))
    traj = rom_solve(model, state, 0, full_span["quad"])
    assert traj.n_steps == 0 and np.array_equal(traj.final.c_rho, state.c_rho)


def test_moments_of_isotropic_state(full_span):
    model = full_span["model"]
    c_rho = np.arange(1.0, model.r_rho + 1)
    traj = rom_solve(model, RomState(c_rho, np.zeros((model.r_g, 26))), 0, full_span["quad"])
    assert not np.any(reconstruct_moments(model, traj, 1))
    second = reconstruct_moments(model, traj, 2)
    assert np.allclose(second[0, 0, 0], model.basis_rho.B @ c_rho / 3, rtol=1e-14)
    assert not np.any(second[0, 0, 1])
    with pytest.raises(ValueError):
        reconstruct_moments(model, traj, 3)


def test_moments_match_full_order_moments(full_span):
    d = full_span
    model, sink, quad = d["model"], d["sink"], d["quad"]
    eps = model.epsilon
    state = model.project_initial(d["problem"].rho0(d["mesh"]), np.zeros((16, 26)))
    traj = rom_solve(model, state, model.n_steps, quad, keep_g=True)
    first = reconstruct_moments(model, traj, 1)
    second = reconstruct_moments(model, traj, 2)
    wv = quad.weights[:, None] * quad.nodes
    n = model.n_steps
    assert relative(first[n], eps * (sink.g[n] @ wv).T) <= 1e-8
    f_full = sink.rho[n][:, None] + eps * sink.g[n]
    ref2 = np.einsum("ik,k,ka,kb->abi", f_full, quad.weights, quad.nodes, quad.nodes)
    assert relative(second[n], ref2) <= 1e-8
    # weighted sum commutes with the basis expansion
    g_full = model.basis_g.B @ traj.c_g[n]
    assert relative(first[n], eps * (g_full @ wv).T) <= 1e-10


def test_prediction_on_training_directions_is_consistent(full_span):
    d = full_span
    model, quad = d["model"], d["quad"]
    state = model.project_initial(d["problem"].rho0(d["mesh"]), np.zeros((16, 26)))
    traj = rom_solve(model, state, model.n_steps, quad, keep_g=True)
    pick = [0, 5, 17]
    pred = predict_unseen(model, quad.nodes[pick], traj.c_rho, traj.upwind)
    assert relative(pred, traj.c_g[:, :, pick]) <= 1e-8
    f = expand_f(model, traj.c_rho[-1], pred[-1])
    assert f.shape == (16, 3)


def test_prediction_of_zero_state_is_zero(full_span):
    model = full_span["model"]
    pred = predict_unseen(model, [0.0, 0.6, 0.8], np.zeros((4, model.r_rho)),
                          np.zeros((4, model.r_g)))
    assert pred.shape == (4, model.r_g, 1) and not np.any(pred)


def test_prediction_input_checks(full_span):
    model = full_span["model"]
    with pytest.raises(ValueError):
        predict_unseen(model, [1.0, 1.0, 0.0], np.zeros((2, model.r_rho)),
                       np.zeros((2, model.r_g)))
    with pytest.raises(ValueError):
        predict_unseen(model, [1.0, 0.0, 0.0], np.zeros((3, model.r_rho)),
                       np.zeros((2, model.r_g)))


def test_serialization_is_bitwise(full_span, tmp_path):
    model = full_span["model"]
    raw = model_to_bytes(model)
    back = model_from_bytes(raw)
    assert model_to_bytes(back) == raw
    path = tmp_path / "m.mmrb"
    save_model(model, path)
    again = load_model(path)
    state = RomState(np.ones(model.r_rho), np.ones((model.r_g, 26)))
    a = rom_step(state, model, model.quad_rq)
    b = rom_step(state, again, again.quad_rq)
    assert np.array_equal(a.c_rho, b.c_rho) and np.array_equal(a.c_g, b.c_g)
    with pytest.raises(Exception):
        model_from_bytes(b"junk" + raw[4:])


def test_projection_input_checks():
    rng = np.random.default_rng(1)
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 3, 3), 1.0, 0.0)
    bad = ReducedBasis(2 * np.eye(9)[:, :2], np.ones(2), np.eye(2))
    with pytest.raises(NumericalError):
        project_operators(ops, bad, orthonormal(rng, 9, 3), lebedev(26), 1.0, 0.01)
    v = np.array([[1, 1, 0], [-1, -1, 0], [0, 0, 1], [0, 0, -1]]) / np.sqrt([2, 2, 1, 1])[:, None]
    skew = AngularQuadrature(v, [0.25] * 4, 1, "reduced_ls")
    with pytest.raises(ConfigurationError):
        project_operators(ops, orthonormal(rng, 9, 2), orthonormal(rng, 9, 3), skew, 1.0, 0.01)
    with pytest.raises(NumericalError):
        ReducedBasis.from_snapshots(np.zeros((9, 3)))


def test_basis_factors_reconstruct_snapshots():
    rng = np.random.default_rng(2)
    S = rng.standard_normal((20, 3)) @ rng.standard_normal((3, 7))
    b = ReducedBasis.from_snapshots(S)
    assert b.rank == 3 and b.snapshot_count == 7
    assert np.allclose(b.B.T @ b.B, np.eye(3), atol=1e-10)
    assert np.allclose(b.V.T @ b.V, np.eye(3), atol=1e-10)
    assert np.all(b.Lambda > 0) and np.all(np.diff(b.Lambda) <= 0)
    assert relative((b.B * b.Lambda) @ b.V.T, S) <= 1e-12
    assert b.spectral_ratio() == pytest.approx(b.Lambda[-1] / b.Lambda.sum())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), rr=st.integers(1, 9), rg=st.integers(1, 9),
       epsilon=st.sampled_from([1.0, 0.1, 0.005, 1e-6]))
def test_reduced_schur_is_spd(seed, rr, rg, epsilon):
    rng = np.random.default_rng(seed)
    ops = assemble_operators(build_mesh([0, 1], [0, 1], 3, 3), lambda x, y: 0.5 + x, 0.0)
    model = project_operators(ops, orthonormal(rng, 9, rr), orthonormal(rng, 9, rg),
                              lebedev(50), epsilon, 0.01)
    H = model.h_matrix(lebedev(110))
    assert np.max(np.abs(H - H.T)) <= 1e-12 * np.max(np.abs(H))
    assert np.linalg.eigvalsh(H).min() > 0
