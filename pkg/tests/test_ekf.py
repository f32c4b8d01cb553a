import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import expm_pose, logm_twist, random_scene, rel_err
from magloc.ekf import (
    DynamicsInput,
    FilterDivergence,
    FilterParams,
    FilterState,
    params_with,
    predict,
    transition_matrices,
    update,
)
from magloc.liegroups import Pose, Twist, exp_se3
from magloc.scenario import SceneSpec, pose_errors, sample_batch, sample_pose
from magloc.sensing import NoiseSpec, predict_measurement, synthesize_measurement


def random_state(rng, params=None):
    params = params or FilterParams()
    A = rng.normal(size=(6, 6))
    P = A @ A.T * 10 ** rng.uniform(-4, -1) + 1e-6 * np.eye(6)
    return FilterState(sample_pose(SceneSpec().workspace, rng), P)


def random_input(rng, scale=0.3):
    v = rng.normal(size=6) * scale
    return DynamicsInput(Twist(tuple(v[:3]), tuple(v[3:])))


def fd_flow(a, h=1e-6):
    """d/dxi of log(exp(-a) exp(xi) exp(a)) at xi = 0 via the generic matrix exponential."""
    Ea, Ea_inv = expm_pose(a).matrix(), expm_pose(-a).matrix()
    F = np.zeros((6, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        plus = logm_twist(Ea_inv @ expm_pose(e).matrix() @ Ea)
        minus = logm_twist(Ea_inv @ expm_pose(-e).matrix() @ Ea)
        F[:, i] = (plus - minus) / (2 * h)
    return F


def fd_input_map(a, dt, h=1e-6):
    """d/dw of log(exp(a)^-1 exp(a + w dt)) at w = 0."""
    Ea_inv = np.linalg.inv(expm_pose(a).matrix())
    G = np.zeros((6, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = h * dt
        plus = logm_twist(Ea_inv @ expm_pose(a + e).matrix())
        minus = logm_twist(Ea_inv @ expm_pose(a - e).matrix())
        G[:, i] = (plus - minus) / (2 * h)
    return G


def test_zero_twist_no_process_noise_is_identity(rng):
    params = FilterParams(process_noise=np.zeros((6, 6)))
    state = random_state(rng)
    out = predict(state, DynamicsInput(), params)
    assert out.estimate is state.estimate
    np.testing.assert_array_equal(out.covariance, state.covariance)


def test_zero_twist_trace_grows_by_6q(rng):
    q = 3e-7
    params = FilterParams(process_noise=q * np.eye(6))
    state = random_state(rng)
    out = predict(state, DynamicsInput(), params)
    assert np.trace(out.covariance) - np.trace(state.covariance) == pytest.approx(6 * q, rel=1e-9)


def test_transition_matches_flow_finite_differences(rng):
    for _ in range(200):
        u = random_input(rng, scale=rng.uniform(0.01, 0.5))
        dt = float(rng.uniform(0.1, 1.5))
        F, G = transition_matrices(u, dt)
        a = u.algebra() * dt
        assert rel_err(F, fd_flow(a)) < 1e-5
        assert rel_err(G, fd_input_map(a, dt)) < 1e-5


def test_predict_propagates_estimate(rng):
    u = random_input(rng)
    state = random_state(rng)
    params = FilterParams(timestep=0.5)
    out = predict(state, u, params)
    assert out.estimate.allclose(state.estimate @ exp_se3(u.algebra() * 0.5), atol=1e-14)


def test_gyro_bias_enters_angular_rate():
    u = DynamicsInput(Twist((1, 2, 3), (0.1, 0.2, 0.3)), gyro_bias=(0.01, 0.0, -0.01))
    np.testing.assert_allclose(u.algebra(), [1, 2, 3, 0.11, 0.2, 0.29])


def test_zero_innovation_fixed_point(rng):
    for _ in range(50):
        T, batch = random_scene(rng, n=5)
        state = FilterState(T, random_state(rng).covariance)
        y = predict_measurement(T, batch)
        res = update(state, batch, y, FilterParams())
        assert res.accepted
        np.testing.assert_array_equal(res.innovation, 0.0)
        assert res.state.estimate.matrix().tobytes() == T.matrix().tobytes()
        assert np.trace(res.state.covariance) < np.trace(state.covariance)


def test_update_contracts_trace_and_stays_consistent(rng):
    params = FilterParams()
    for _ in range(200):
        T, batch = random_scene(rng, n=int(rng.integers(2, 8)))
        state = random_state(rng)
        y = synthesize_measurement(T, batch, NoiseSpec(1e-6, 1e-2), rng)
        res = update(state, batch, y, params)
        assert res.accepted
        assert np.trace(res.state.covariance) <= np.trace(state.covariance) + 1e-12
        assert res.state.is_consistent()
        assert res.state.estimate.is_valid(1e-10)


def test_noiseless_static_convergence(rng):
    scene = SceneSpec()
    truth = sample_pose(scene.workspace, rng)
    params = FilterParams()
    state = FilterState.initial(params, Pose.identity(scene.workspace.center))
    for _ in range(400):
        batch = sample_batch(scene.planes, scene.moment, 20, rng)
        state = predict(state, DynamicsInput(), params)
        state = update(state, batch, predict_measurement(truth, batch), params).state
        assert state.is_consistent()
    e_p, e_R = pose_errors(truth, state.estimate)
    assert e_p < 1e-3 and e_R < 0.1


def test_estimate_stays_on_manifold_over_many_updates(rng):
    # large random innovations stress the multiplicative update directly
    scene = SceneSpec(n=2)
    params = FilterParams()
    state = FilterState.initial(params, Pose.identity())
    batches = [sample_batch(scene.planes, scene.moment, 2, rng) for _ in range(20)]
    for i in range(10_000):
        batch = batches[i % 20]
        h = predict_measurement(state.estimate, batch).values
        y = h + rng.normal(size=h.size) * np.r_[np.full(8, 1e-5), np.full(3, 0.1)]
        state = FilterState(update(state, batch, y, params).state.estimate, params.initial_covariance)
        if i % 500 == 0:
            assert state.estimate.is_valid(1e-10)
    assert state.estimate.is_valid(1e-10)


def test_update_deterministic(rng):
    T, batch = random_scene(rng, n=6)
    state = random_state(rng)
    y = synthesize_measurement(T, batch, NoiseSpec(1e-6, 1e-2), rng)
    a = update(state, batch, y, FilterParams())
    b = update(state, batch, y, FilterParams())
    assert a.state.estimate.matrix().tobytes() == b.state.estimate.matrix().tobytes()
    assert a.state.covariance.tobytes() == b.state.covariance.tobytes()


def test_ill_conditioned_update_rejected(rng):
    T, batch = random_scene(rng, n=4)
    state = random_state(rng)
    y = predict_measurement(exp_se3(rng.normal(size=6) * 0.01) @ T, batch)
    res = update(state, batch, y, FilterParams(cond_limit=1.0))
    assert not res.accepted and "ill-conditioned" in res.message
    assert res.state is state


def test_block_diagonal_structure(rng):
    params = FilterParams(block_diagonal=True)
    T, batch = random_scene(rng, n=4)
    state = FilterState(T, params.initial_covariance)
    y = synthesize_measurement(T, batch, NoiseSpec(1e-6, 1e-2), rng)
    out = update(predict(state, random_input(rng), params), batch, y, params).state
    assert np.all(out.covariance[:3, 3:] == 0.0) and np.all(out.covariance[3:, :3] == 0.0)
    full = update(state, batch, y, FilterParams()).state
    assert np.abs(full.covariance[:3, 3:]).max() > 0


def test_divergence_reported():
    P = np.eye(6)
    P[0, 0] = np.inf
    with pytest.raises(FilterDivergence):
        predict(FilterState(Pose.identity(), P), DynamicsInput(), FilterParams())


def test_update_rejects_wrong_length(rng):
    T, batch = random_scene(rng, n=3)
    with pytest.raises(ValueError, match="4n\\+3"):
        update(FilterState.initial(FilterParams(), T), batch, np.zeros(10), FilterParams())


def test_params_validation():
    with pytest.raises(ValueError):
        FilterParams(timestep=0.0)
    with pytest.raises(ValueError):
        FilterParams(process_noise=-np.eye(6))
    with pytest.raises(ValueError):
        FilterParams(initial_covariance=np.eye(3))
    p = params_with(FilterParams(), timestep=2.0)
    assert p.timestep == 2.0
    r = FilterParams(mag_std=2e-6, accel_std=0.1, norm_scale=4.0).measurement_noise(2)
    np.testing.assert_allclose(r, [1.6e-11] * 2 + [4e-12] * 6 + [0.01] * 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 2.0))
def test_predict_update_keep_covariance_consistent(seed, dt):
    rng = np.random.default_rng(seed)
    params = FilterParams(timestep=dt)
    T, batch = random_scene(rng, n=3)
    state = random_state(rng, params)
    for _ in range(3):
        state = predict(state, random_input(rng, 0.1), params)
        assert state.is_consistent()
        y = synthesize_measurement(T, batch, NoiseSpec(1e-6, 1e-2), rng)
        res = update(state, batch, y, params)
        assert res.state.is_consistent()
        assert np.trace(res.state.covariance) <= np.trace(state.covariance) + 1e-12
        state = res.state
