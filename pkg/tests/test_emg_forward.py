import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emgtensor.emg_forward import (
    ConductivitySpec,
    DenseForward,
    MeasurementSetup,
    MuscleModel,
    add_noise,
    affine_decomposition,
    assemble_direct,
    assemble_rhs,
    assemble_stencil_operator,
    assemble_vm,
    assemble_vm_all,
    default_electrodes,
    directional_operator,
    electrode_nodes,
    node_weights,
    observe,
    project_to_fiber,
    rosenfalck_ap,
    smooth_fiber_potential,
    solve_forward_dense,
)
from emgtensor.errors import InvalidArgument

from desk import P_REF, desk_model, mms_error
from oracles import boundary_weights, ghost_node_operator, rosenfalck

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


# --- action potential and fibers ------------------------------------------------

def test_rosenfalck_examples():
    assert rosenfalck_ap(0.0) == -90.0
    assert rosenfalck_ap(3.0, (1.0, 1.0, 0.0)) == pytest.approx(27 * np.exp(-3), rel=1e-15)
    assert rosenfalck_ap(3.0, (1.0, 1.0, 0.0)) == pytest.approx(1.34425, abs=5e-6)
    assert rosenfalck_ap(-2.0) == -90.0


def test_rosenfalck_peak_location_by_grid_search():
    s = np.linspace(0, 20, 200001)
    vals = np.array([rosenfalck(v, 96.0, 1.0, 90.0) for v in s[::100]])
    coarse = s[::100][np.argmax(vals)]
    assert abs(s[np.argmax(rosenfalck_ap(s))] - 3.0) < 1e-3
    assert abs(coarse - 3.0) < 0.011


@given(st.floats(-5, 30, allow_nan=False))
def test_rosenfalck_matches_oracle(s):
    assert rosenfalck_ap(s, (96.0, 1.0, 90.0)) == pytest.approx(rosenfalck(s, 96.0, 1.0, 90.0),
                                                                  rel=1e-13, abs=1e-12)


def test_projection_examples():
    np.testing.assert_allclose(project_to_fiber([1, 2, 3], [0, 0, 0], [1, 0, 0]), [1, 0, 0])
    np.testing.assert_allclose(project_to_fiber([1, 2, 3], [1, 2, 0], [0, 0, 2]), [1, 2, 3])
    with pytest.raises(InvalidArgument):
        project_to_fiber([1, 2, 3], [0, 0, 0], [0, 0, 0])


@given(vec3, vec3, vec3.filter(lambda d: np.linalg.norm(d) > 1e-3))
@settings(max_examples=100)
def test_projection_residual_is_orthogonal(x, y, d):
    r = x - project_to_fiber(x, y, d)
    assert abs(r @ d) <= 1e-12 * max(1.0, np.linalg.norm(x - y) * np.linalg.norm(d)) * 100


def single_fiber_model(**kw):
    base = dict(fiber_starts=np.array([[2.0, 0.0, 0.5]]), direction=2, beta=50.0)
    base.update(kw)
    return desk_model(**base)


def test_smooth_potential_on_fiber_and_at_one_over_e():
    m = single_fiber_model(beta=8.0)
    t = 0.3
    on = smooth_fiber_potential(m, np.array([2.0, 1.0, 0.5]), 0, t)
    off = smooth_fiber_potential(m, np.array([2.0 + np.sqrt(2 / 8.0), 1.0, 0.5]), 0, t)
    assert on == pytest.approx(np.interp(1.0, m.fiber_grid(), rosenfalck_ap(m.u * t - m.fiber_grid())))
    assert off / on == pytest.approx(np.exp(-1), rel=1e-12)


def test_smooth_potential_decreases_transversally():
    m = single_fiber_model()
    vals = [abs(smooth_fiber_potential(m, np.array([2.0 + r, 1.0, 0.5]), 0, 0.2))
            for r in np.linspace(0, 1, 21)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_vm_zero_fibers_and_linearity():
    empty = desk_model(fiber_starts=np.zeros((0, 3)))
    assert np.all(assemble_vm(empty, 2) == 0)
    one = single_fiber_model()
    two = single_fiber_model(fiber_starts=np.array([[2.0, 0.0, 0.5], [2.0, 0.0, 0.5]]))
    np.testing.assert_array_equal(assemble_vm_all(two), 2 * assemble_vm_all(one))


def test_vm_concentrates_near_fiber_for_large_beta():
    beta = 400.0
    m = single_fiber_model(beta=beta)
    v = np.abs(assemble_vm(m, 3))
    coords = m.coords()
    dist = np.hypot(coords[:, 0] - 2.0, coords[:, 2] - 0.5)
    far = dist >= 5 * 3 / np.sqrt(beta)
    assert v[far].max() < 1e-6 * v[~far].max()


def test_vm_time_index_checked():
    with pytest.raises(InvalidArgument):
        assemble_vm(desk_model(), 5)


def test_model_validation():
    with pytest.raises(InvalidArgument):
        MuscleModel(h_M=0.3)
    with pytest.raises(InvalidArgument):
        MuscleModel(direction=4)
    with pytest.raises(InvalidArgument):
        MuscleModel(beta=0.0)
    assert MuscleModel().grid_shape == (13, 7, 4)


# --- stencil ------------------------------------------------------------------------

def test_constant_sigma_interior_row_is_seven_point_laplacian():
    B = assemble_stencil_operator(np.ones((5, 5, 5)), 1.0).toarray()
    center = 2 + 5 * (2 + 5 * 2)
    row = B[center]
    nbrs = [center + s for s in (-25, -5, -1, 1, 5, 25)]
    assert row[center] == -6.0
    assert all(row[j] == 1.0 for j in nbrs)
    assert np.count_nonzero(row) == 7


def test_one_dimensional_reduction():
    B = assemble_stencil_operator(np.ones((5, 1, 1)), 1.0).toarray()
    np.testing.assert_array_equal(B[2, 1:4], [1.0, -2.0, 1.0])
    sig = np.array([1.0, 2.0, 4.0, 3.0, 1.0]).reshape(5, 1, 1)
    B = assemble_stencil_operator(sig, 1.0).toarray()
    np.testing.assert_allclose(B[2, 1:4], [(2 + 4) / 2, -(2 + 2 * 4 + 3) / 2, (4 + 3) / 2])


@given(st.integers(0, 2**31 - 1), st.sampled_from([(3, 4, 2), (2, 2, 2), (4, 1, 3), (5, 3, 1)]))
@settings(max_examples=15)
def test_stencil_is_symmetrized_ghost_node_operator(seed, shape):
    sigma = np.random.default_rng(seed).uniform(0.5, 3.0, shape)
    B = assemble_stencil_operator(sigma, 0.5).toarray()
    ref = boundary_weights(shape)[:, None] * ghost_node_operator(sigma, 0.5)
    np.testing.assert_allclose(B, ref, atol=1e-12)
    np.testing.assert_array_equal(B, B.T)
    np.testing.assert_allclose(B.sum(axis=1), 0, atol=1e-11)


def test_stencil_rejects_nonpositive_sigma():
    with pytest.raises(InvalidArgument):
        assemble_stencil_operator(np.zeros((3, 3, 3)), 1.0)


def test_stencil_exact_for_quadratic_with_affine_sigma():
    n = 8
    h = 1.0 / n
    ax = np.linspace(0, 1, n + 1)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    sigma = 1 + X
    phi = X**2 + 2 * Y**2 + 3 * Z**2
    exact = 2 * X + (1 + X) * (2 + 4 + 6)
    r = (assemble_stencil_operator(sigma, h) @ phi.reshape(-1, order="F")).reshape(X.shape, order="F")
    np.testing.assert_allclose(r[1:-1, 1:-1, 1:-1], exact[1:-1, 1:-1, 1:-1], rtol=1e-11)


def test_manufactured_solution_is_second_order():
    errs = [mms_error(n) for n in (4, 8, 16, 32)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.5 <= r <= 4.5 for r in ratios), ratios


# --- affine operator ----------------------------------------------------------------

@pytest.fixture(scope="module")
def desk():
    m = desk_model()
    cond = ConductivitySpec()
    return m, cond, affine_decomposition(m, cond)


def test_affine_reconstruction_at_reference(desk):
    m, cond, aff = desk
    direct = assemble_direct(m, cond, P_REF)
    diff = abs(direct - aff.assemble(P_REF)).max()
    assert diff <= 1e-13 * abs(direct).max()


def test_affine_at_center_equals_a0(desk):
    m, cond, aff = desk
    assert abs(aff.assemble(aff.center) - aff.A0).max() == 0


def test_directional_parts_are_symmetric_and_semidefinite(desk):
    m, _, _ = desk
    for k in range(3):
        L = directional_operator(m.grid_shape, m.h_M, k).toarray()
        np.testing.assert_array_equal(L, L.T)
        assert np.linalg.eigvalsh(L).max() <= 1e-10
        np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-12)


def test_operator_spd_at_parameter_corners(desk):
    _, cond, aff = desk
    for corner in np.array(np.meshgrid(*[[cond.s_minus, cond.s_plus]] * 3)).reshape(3, -1).T:
        A = aff.assemble(corner).toarray()
        np.testing.assert_array_equal(A, A.T)
        np.linalg.cholesky(A)


def test_pinned_node_is_decoupled(desk):
    _, _, aff = desk
    for Ak in aff.Ak:
        assert Ak[0].nnz == 0 and Ak[:, 0].nnz == 0
    row = aff.A0[0].toarray().ravel()
    assert row[0] == 1 and np.count_nonzero(row) == 1


def test_conductivity_bounds():
    cond = ConductivitySpec()
    with pytest.raises(InvalidArgument):
        cond.check([0.0, 1.0, 1.0])
    with pytest.raises(InvalidArgument):
        ConductivitySpec(s_minus=2.0, s_plus=1.0)


# --- right-hand side ----------------------------------------------------------------

def test_rhs_of_constant_field_vanishes(desk):
    m, _, _ = desk
    for k in range(3):
        assert np.abs(directional_operator(m.grid_shape, m.h_M, k) @ np.full(m.n_nodes, 7.0)).max() < 1e-9


def test_rhs_of_quadratic_is_constant_second_derivative(desk):
    m, _, _ = desk
    x2 = m.coords()[:, 1]
    b = (directional_operator(m.grid_shape, m.h_M, 1) @ x2**2).reshape(m.grid_shape, order="F")
    np.testing.assert_allclose(b[1:-1, 1:-1, 1:-1], 2.0, rtol=1e-12)


def test_rhs_reconstruction_matches_direct_discretization():
    m = MuscleModel(t_steps=6, h_t=0.05)
    rhs = assemble_rhs(m)
    vm = assemble_vm_all(m)
    direct = assemble_stencil_operator(P_REF, m.h_M, m.grid_shape) @ vm
    direct[0] = 0.0
    np.testing.assert_allclose(rhs.rhs(P_REF), direct, rtol=0, atol=1e-12 * np.abs(direct).max())


@given(st.tuples(*[st.floats(0.001, 10)] * 3), st.tuples(*[st.floats(0.001, 10)] * 3),
       st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=20)
def test_rhs_is_linear_in_p(p, q, a, b):
    rhs = _desk_rhs()
    p, q = np.array(p), np.array(q)
    np.testing.assert_allclose(rhs.rhs(a * p + b * q), a * rhs.rhs(p) + b * rhs.rhs(q),
                               rtol=1e-12, atol=1e-9)


_RHS = {}


def _desk_rhs():
    if "r" not in _RHS:
        _RHS["r"] = assemble_rhs(desk_model())
    return _RHS["r"]


# --- dense solve ----------------------------------------------------------------------

def test_dense_solution_residual_and_zero_mean(desk):
    m, cond, aff = desk
    rhs = _desk_rhs()
    w = node_weights(m.grid_shape)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = rng.uniform(cond.s_minus, cond.s_plus, 3)
        phi = solve_forward_dense(aff, rhs, p)
        b = rhs.rhs(p)
        r = aff.assemble(p) @ (phi - phi[0]) - b
        assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(b)
        np.testing.assert_allclose(w @ phi, 0, atol=1e-12 * np.abs(phi).max())


def test_dense_solution_is_neumann_solution(desk):
    """The pinned system solves the singular no-flow problem up to a constant."""
    m, cond, aff = desk
    rhs = _desk_rhs()
    phi = solve_forward_dense(aff, rhs, P_REF, 3)
    sig = np.asarray(cond.sigma_e) + P_REF
    full = -assemble_stencil_operator(sig, m.h_M, m.grid_shape)
    b = sum(P_REF[k] * directional_operator(m.grid_shape, m.h_M, k) for k in range(3)) @ assemble_vm(m, 3)
    np.testing.assert_allclose(full @ phi, b, atol=1e-9 * np.abs(b).max())


def test_homogeneity_without_extracellular_conductivity():
    m = desk_model()
    cond = ConductivitySpec(sigma_e=(0.0, 0.0, 0.0))
    aff = affine_decomposition(m, cond, np.zeros(3))
    rhs = _desk_rhs()
    p = np.array([0.7, 2.0, 1.1])
    np.testing.assert_allclose(solve_forward_dense(aff, rhs, 3 * p), solve_forward_dense(aff, rhs, p),
                               rtol=1e-9, atol=1e-9)


# --- observation and noise -------------------------------------------------------------

def test_default_electrodes_map_to_distinct_top_nodes():
    m = desk_model()
    e = default_electrodes(m)
    assert e.shape == (32, 3) and np.all(e[:, 2] == m.extent[2])
    nodes = electrode_nodes(m, e)
    assert len(set(nodes)) == 32
    assert np.all(m.coords()[nodes, 2] == pytest.approx(1.0))


def test_observe_node_and_constant_fields():
    m = desk_model()
    coords = m.coords()
    setup = MeasurementSetup(coords[[5, 100, 363]])
    field = np.arange(m.n_nodes, dtype=float)
    np.testing.assert_array_equal(observe(field, setup, m), [5, 100, 363])
    np.testing.assert_array_equal(observe(np.full(m.n_nodes, 2.5), MeasurementSetup(default_electrodes(m)), m), 2.5)
    with pytest.raises(InvalidArgument):
        observe(field, MeasurementSetup([[5.0, 0.0, 0.0]]), m)


def test_nearest_node_observation_converges_under_refinement():
    f = lambda c: np.sin(c[:, 0]) * np.cos(c[:, 1]) + c[:, 2]
    point = np.array([[1.3, 0.7, 1.0]])
    diffs = []
    for h in (1 / 3, 1 / 6, 1 / 12, 1 / 24):
        m = MuscleModel(h_M=h, t_steps=1)
        diffs.append(abs(observe(f(m.coords()), MeasurementSetup(point), m)[0] - f(point)[0]))
    assert diffs[-1] < diffs[0] and diffs[-1] < 0.05


def test_noise_statistics_and_determinism():
    rng = np.random.default_rng(11)
    draws = add_noise(np.zeros(10**6), 2.0, rng)
    assert 2.0 * 0.99 <= draws.var() <= 2.0 * 1.01
    a = add_noise(np.ones(5), 2.0, np.random.default_rng(3))
    b = add_noise(np.ones(5), 2.0, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(add_noise(np.ones(5), 1e-300, np.random.default_rng(0)), 1.0, rtol=1e-140)
    with pytest.raises(InvalidArgument):
        add_noise(np.ones(3), 0.0, rng)


def test_dense_forward_stacks_electrodes_fastest(desk):
    m, _, aff = desk
    setup = MeasurementSetup(default_electrodes(m))
    rhs = _desk_rhs()
    g = DenseForward(aff, {2: rhs}, m, setup)(P_REF, 2)
    phi = solve_forward_dense(aff, rhs, P_REF)
    assert g.shape == (32 * 5,)
    np.testing.assert_array_equal(g[32:64], observe(phi, setup, m)[:, 1])
