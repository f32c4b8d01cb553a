"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test appends a single PASS/FAIL line to ``ACCEPTANCE_LINES``; the
lines are printed in the terminal summary (see conftest.py).
"""

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_scene, rel_err
from test_ekf import fd_flow, random_input, random_state
from test_liegroups import fd_exp_derivative
from test_magnetics import fd_gradient, random_epm, random_query
from test_sensing import block_rel_err, fd_jacobian
from magloc.ekf import DynamicsInput, FilterParams, FilterState, predict, transition_matrices, update
from magloc.liegroups import Pose, exp_derivative, exp_se3, log_se3, skew
from magloc.magnetics import Epm, dipole_field, dipole_field_gradient, total_field
from magloc.observability import Whitening, analyze, codistribution, workspace_condition_map
from magloc.scenario import ConvergenceCriteria, SceneSpec, monte_carlo, sample_batch, sample_pose
from magloc.sensing import NoiseSpec, measurement_jacobian, predict_measurement, synthesize_measurement

pytestmark = pytest.mark.acceptance

MASTER_SEED = 2024
NOISELESS = NoiseSpec()
DEFAULT_NOISE = NoiseSpec(mag_std=1e-6, accel_std=1e-2)


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  criterion {number} ({title}): {detail}")
    return ok


def _median_finite(a):
    a = np.asarray(a, dtype=float)
    return float(np.median(a[np.isfinite(a)]))


@pytest.fixture(scope="module")
def mc_noiseless():
    return monte_carlo(500, 2, 20, FilterParams(), NOISELESS, ConvergenceCriteria(), MASTER_SEED)


@pytest.fixture(scope="module")
def mc_noisy():
    return monte_carlo(500, 2, 20, FilterParams(), DEFAULT_NOISE, ConvergenceCriteria(), MASTER_SEED)


def test_criterion_1_observability_rank():
    rng = np.random.default_rng(1)
    scene = SceneSpec(m=2)
    counts = {}
    for n, target in ((1, 5), (2, 6)):
        hits = 0
        for _ in range(1000):
            T = sample_pose(scene.workspace, rng)
            batch = sample_batch(scene.planes, scene.moment, n, rng, min_configs=1)
            hits += analyze(codistribution(T, batch)).rank == target
        counts[n] = hits / 1000
    ok = counts[1] >= 0.99 and counts[2] >= 0.99
    detail = f"n=1 rank 5 in {100 * counts[1]:.1f}%, n=2 rank 6 in {100 * counts[2]:.1f}% (need >= 99%)"
    assert record(1, "observability rank", ok, detail)


def test_criterion_2_jacobian_oracles():
    rng = np.random.default_rng(2)
    worst = {}

    errs = []
    for _ in range(200):
        T, batch = random_scene(rng, m=int(rng.integers(1, 4)), n=int(rng.integers(2, 6)))
        errs.append(block_rel_err(measurement_jacobian(T, batch), fd_jacobian(T, batch), batch.n))
    worst["measurement_jacobian"] = max(errs)

    errs = []
    for _ in range(200):
        epm = random_epm(rng)
        p = random_query(rng, epm)
        errs.append(rel_err(dipole_field_gradient(epm, p), fd_gradient(lambda q: dipole_field(epm, q), p)))
    worst["dipole_field_gradient"] = max(errs)

    errs = []
    for _ in range(200):
        xi = rng.normal(size=6) * rng.uniform(0.05, 1.5)
        errs.append(rel_err(exp_derivative(xi), fd_exp_derivative(xi)))
    worst["exp_derivative"] = max(errs)

    errs = []
    for _ in range(200):
        u = random_input(rng, scale=rng.uniform(0.01, 0.5))
        dt = float(rng.uniform(0.1, 1.5))
        F, _ = transition_matrices(u, dt)
        errs.append(rel_err(F, fd_flow(u.algebra() * dt)))
    worst["F_k"] = max(errs)

    ok = all(v < 1e-5 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (max rel err over 200 cases, need < 1e-5)"
    assert record(2, "Jacobian oracles", ok, detail)


def test_criterion_3_codistribution_equals_jacobian():
    rng = np.random.default_rng(3)
    w = Whitening()
    errs = []
    for _ in range(100):
        T, batch = random_scene(rng, m=int(rng.integers(1, 7)), n=int(rng.integers(2, 10)))
        c = codistribution(T, batch, whitening=w, position_frame="body")
        errs.append(rel_err(c.matrix, w.apply(measurement_jacobian(T, batch), batch.n)))
    ok = max(errs) < 1e-8
    assert record(3, "codistribution = Jacobian", ok, f"max rel err {max(errs):.1e} over 100 cases (need < 1e-8)")


def _orientation_before_1000(summary):
    conv = [t for t in summary.trials if t.converged]
    return conv, all(t.orient_convergence_iter is not None and t.orient_convergence_iter < 1000 for t in conv)


def test_criterion_4_monte_carlo_convergence(mc_noiseless, mc_noisy):
    clean = mc_noiseless.fraction_below(1e-3)
    noisy = mc_noisy.fraction_below(1e-3)
    conv_c, orient_c = _orientation_before_1000(mc_noiseless)
    conv_n, orient_n = _orientation_before_1000(mc_noisy)
    ok = clean >= 0.95 and noisy >= 0.90 and orient_c and orient_n
    detail = (
        f"noiseless {100 * clean:.1f}% of 500 end with e_p < 1 mm (need >= 95%); "
        f"default noise {100 * noisy:.1f}% (need >= 90%); "
        f"e_R < 0.1 before k=1000 in {len(conv_c)}/{len(conv_c)} and {len(conv_n)}/{len(conv_n)} converged trials"
        if orient_c and orient_n
        else "some converged trial never reached e_R < 0.1"
    )
    assert record(4, "Monte Carlo convergence", ok, detail)


def test_criterion_5_multi_epm_speedup(mc_noiseless):
    one = monte_carlo(200, 1, 20, FilterParams(), NOISELESS, ConvergenceCriteria(), MASTER_SEED)
    # per-trial seeds depend only on (master, index): the first 200 trials of
    # the criterion-4 run are exactly a 200-trial run at the same seed
    two = np.array([np.inf if t.configs_to_convergence is None else t.configs_to_convergence for t in mc_noiseless.trials[:200]])
    med1, med2 = one.median_configs(), float(np.median(two))
    ok = med2 < med1
    assert record(5, "multi-EPM speedup", ok, f"median n*k: m=1 {med1:g}, m=2 {med2:g} (need m=2 < m=1)")


def test_criterion_6_conditioning_trends():
    def median_map(m, n):
        return workspace_condition_map("xz", 21, m, n, trials=10, seed=6).median()

    m1 = median_map(1, 100)
    ns = (2, 5, 10, 20, 50, 100)
    m2 = {n: median_map(2, n) for n in ns}
    ordered = m1 > m2[100]
    monotone = all(m2[a] >= m2[b] for a, b in zip(ns, ns[1:]))
    plateau = (m2[20] - m2[100]) / m2[20]
    ok = ordered and monotone and plateau <= 0.25
    trend = ", ".join(f"{n}:{m2[n]:.2f}" for n in ns)
    detail = (
        f"median N_c m=1 {m1:.2f} vs m=2 {m2[100]:.2f} at n=100; m=2 by n {{{trend}}} "
        f"{'non-increasing' if monotone else 'NOT monotone'}, n=20 to 100 improvement {100 * plateau:.1f}% (need <= 25%)"
    )
    assert record(6, "conditioning trends", ok, detail)


def test_criterion_7_orientation_before_position(mc_noiseless):
    orient = _median_finite(mc_noiseless.orient_convergence_iter)
    pos = _median_finite(mc_noiseless.pos_convergence_iter)
    ok = orient <= pos
    assert record(7, "orientation before position", ok, f"median first-below-tolerance k: e_R {orient:g}, e_p {pos:g}")


def _invariant_checks(rng):
    """(name, passed) for every algebraic invariant of the core modules."""
    out = {}

    vs = rng.normal(size=(1000, 2, 3))
    out["skew antisymmetric, skew(a) b = a x b"] = all(
        np.array_equal(skew(a).T, -skew(a)) and np.abs(skew(a) @ b - np.cross(a, b)).max() <= 1e-14 * max(1, np.abs(a).max() * np.abs(b).max())
        for a, b in vs
    )

    ok_valid = ok_round = ok_inv = True
    for _ in range(1000):
        phi = rng.normal(size=3)
        phi *= rng.uniform(0, np.pi - 1e-3) / np.linalg.norm(phi)
        xi = np.concatenate([rng.normal(size=3), phi])
        T = exp_se3(xi)
        ok_valid &= T.is_valid(1e-10)
        ok_round &= np.abs(log_se3(T) - xi).max() <= 1e-9 and exp_se3(log_se3(T)).allclose(T, 1e-9)
        ok_inv &= (T @ exp_se3(-xi)).allclose(Pose.identity(), 1e-10)
    out["exp_se3 on manifold"] = ok_valid
    out["exp/log round trips"] = ok_round
    out["exp(xi) exp(-xi) = I"] = ok_inv
    out["exp_derivative(0) = I exactly"] = np.array_equal(exp_derivative(np.zeros(6)), np.eye(6))

    ok_lin = ok_par = ok_grad = True
    for _ in range(100):
        epm = random_epm(rng)
        p = random_query(rng, epm)
        ok_lin &= np.array_equal(dipole_field(Epm(epm.position, 4.0 * epm.moment), p), 4.0 * dipole_field(epm, p))
        ok_par &= rel_err(dipole_field(epm, 2 * epm.position - p), dipole_field(epm, p)) < 1e-12
        D = dipole_field_gradient(epm, p)
        s = np.abs(D).max()
        ok_grad &= abs(np.trace(D)) <= 1e-12 * s and np.abs(D - D.T).max() <= 1e-12 * s
    out["dipole linear in moment"] = ok_lin
    out["dipole parity B(-r) = B(r)"] = ok_par
    out["gradient traceless and symmetric"] = ok_grad

    ok_fd = True
    for _ in range(100):
        epms = [random_epm(rng) for _ in range(int(rng.integers(2, 7)))]
        p = rng.uniform(-0.1, 0.1, size=3)
        if min(np.linalg.norm(p - e.position) for e in epms) < 0.05:
            p = p + 0.5
        ok_fd &= rel_err(total_field(epms, p)[1], fd_gradient(lambda q: total_field(epms, q)[0], p)) < 1e-5
    out["total_field gradient = FD"] = ok_fd

    ok_len = ok_norm = ok_zero = ok_frame = True
    for _ in range(100):
        T, batch = random_scene(rng, m=int(rng.integers(1, 7)), n=int(rng.integers(2, 10)))
        n = batch.n
        y = predict_measurement(T, batch)
        H = measurement_jacobian(T, batch)
        ok_len &= len(y) == 4 * n + 3
        ok_norm &= np.allclose(y.norms, np.linalg.norm(y.fields, axis=1), rtol=1e-12, atol=0)
        ok_zero &= np.all(H[4 * n :, :3] == 0) and np.all(H[:n, 3:] == 0)
        ok_frame &= np.abs(T.rotation @ y.gravity - batch.constants.g).max() <= 1e-12
    out["measurement length 4n+3"] = ok_len
    out["noiseless norm consistency"] = ok_norm
    out["Jacobian structural zeros"] = ok_zero
    out["gravity frame consistency"] = ok_frame

    params = FilterParams()
    ok_cov = ok_contract = ok_fixed = ok_det = True
    for _ in range(100):
        T, batch = random_scene(rng, n=int(rng.integers(2, 8)))
        state = predict(random_state(rng), random_input(rng, 0.1), params)
        ok_cov &= state.is_consistent()
        y = synthesize_measurement(T, batch, DEFAULT_NOISE, rng)
        a, b = update(state, batch, y, params), update(state, batch, y, params)
        ok_cov &= a.state.is_consistent()
        ok_contract &= np.trace(a.state.covariance) <= np.trace(state.covariance) + 1e-12
        ok_det &= a.state.covariance.tobytes() == b.state.covariance.tobytes()
        ok_det &= a.state.estimate.matrix().tobytes() == b.state.estimate.matrix().tobytes()
        z = update(FilterState(T, state.covariance), batch, predict_measurement(T, batch), params)
        ok_fixed &= z.state.estimate.matrix().tobytes() == T.matrix().tobytes()
    out["covariance symmetric PSD after predict/update"] = ok_cov
    out["update contracts trace(P)"] = ok_contract
    out["zero-innovation fixed point"] = ok_fixed
    out["update deterministic"] = ok_det

    scene = SceneSpec(n=2)
    state = FilterState.initial(params)
    batches = [sample_batch(scene.planes, scene.moment, 2, rng) for _ in range(20)]
    for i in range(10_000):
        batch = batches[i % 20]
        h = predict_measurement(state.estimate, batch).values
        y = h + rng.normal(size=h.size) * np.r_[np.full(8, 1e-5), np.full(3, 0.1)]
        state = FilterState(update(state, batch, y, params).state.estimate, params.initial_covariance)
    out["estimate on manifold after 10,000 updates"] = state.estimate.is_valid(1e-10)
    return out


def test_criterion_8_invariant_suite():
    checks = _invariant_checks(np.random.default_rng(8))
    failed = [k for k, v in checks.items() if not v]
    detail = f"{len(checks) - len(failed)}/{len(checks)} invariants hold" + (f"; failed: {', '.join(failed)}" if failed else "")
    assert record(8, "algebraic invariants", not failed, detail)


def test_criterion_9_hardware_result_excluded():
    # the bench-top accuracy figure needs the physical rig; nothing to run
    ACCEPTANCE_LINES.append("N/A   criterion 9 (hardware accuracy): explicitly out of scope, no simulation target")
