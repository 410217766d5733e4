import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradkf.analytic import (
    BeliefState,
    DegenerateObservationError,
    correct,
    filter_trajectory,
    kalman_gain,
    map_solve,
    project,
)
from gradkf.model import LinearGaussianModel, control_schedule, kinematic_model, simulate
from gradkf.numerics import DimensionError, NotPositiveDefiniteError, is_psd, spd_inverse
from conftest import random_spd


def random_model(rng, n=3, m=3, k=1):
    return LinearGaussianModel(rng.standard_normal((n, n)), rng.standard_normal((n, k)),
                               rng.standard_normal((m, n)), random_spd(rng, n), random_spd(rng, m))


def scalar_riccati_root(a, c, q, r):
    # steady predicted variance: positive root of c^2 P^2 + (r(1-a^2) - q c^2) P - q r = 0
    qa, qb, qc = c * c, r * (1 - a * a) - q * c * c, -q * r
    return (-qb + np.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)


def joseph_posterior(P, K, C, R):
    # covariance of the posterior error expanded from its definition
    I_KC = np.eye(P.shape[0]) - K @ C
    return I_KC @ P @ I_KC.T + K @ R @ K.T


def test_project_formulas(rng):
    model = random_model(rng)
    belief = BeliefState(rng.standard_normal(3), random_spd(rng, 3))
    u = rng.standard_normal(1)
    pred = project(model, belief, u)
    np.testing.assert_allclose(pred.mean, model.A @ belief.mean + model.B @ u)
    np.testing.assert_allclose(pred.cov, model.A @ belief.cov @ model.A.T + model.process_cov)


def test_project_identity_model():
    model = LinearGaussianModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((2, 2)), np.eye(2))
    b = BeliefState([1.0, 2.0], np.diag([1.0, 2.0]))
    p = project(model, b, [0.0])
    np.testing.assert_array_equal(p.mean, b.mean)
    np.testing.assert_array_equal(p.cov, b.cov)


def test_project_dimension_error(rng):
    model = random_model(rng)
    with pytest.raises(DimensionError):
        project(model, BeliefState(np.zeros(2), np.eye(2)), [0.0])


def test_kalman_gain_against_inverse(rng):
    model = random_model(rng)
    P = random_spd(rng, 3)
    K = kalman_gain(model, P)
    S = model.C @ P @ model.C.T + model.obs_cov
    np.testing.assert_allclose(K, P @ model.C.T @ np.linalg.inv(S), rtol=1e-10)


def test_kalman_gain_degenerate():
    model = LinearGaussianModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(DegenerateObservationError):
        kalman_gain(model, np.zeros((2, 2)))


def test_correct_scalar_hand_values():
    model = LinearGaussianModel([[1.0]], [[0.0]], [[1.0]], [[0.0]], [[1.0]])
    post = correct(model, BeliefState([0.0], [[1.0]]), [2.0])
    np.testing.assert_allclose(post.mean, [1.0])
    np.testing.assert_allclose(post.cov, [[0.5]])


def test_correct_uninformative_observation(rng):
    model = random_model(rng).replace(obs_cov=1e12 * np.eye(3))
    pred = BeliefState(rng.standard_normal(3), random_spd(rng, 3))
    post = correct(model, pred, rng.standard_normal(3))
    np.testing.assert_allclose(post.mean, pred.mean, atol=1e-9)


def test_posterior_cov_matches_error_expansion(rng):
    for _ in range(50):
        model = random_model(rng)
        pred = BeliefState(rng.standard_normal(3), random_spd(rng, 3))
        post = correct(model, pred, rng.standard_normal(3))
        K = kalman_gain(model, pred.cov)
        np.testing.assert_allclose(post.cov, joseph_posterior(pred.cov, K, model.C, model.obs_cov), atol=1e-9)


def test_trace_decreases_on_correction(rng):
    for _ in range(50):
        model = random_model(rng)
        pred = BeliefState(np.zeros(3), random_spd(rng, 3))
        post = correct(model, pred, rng.standard_normal(3))
        assert np.trace(post.cov) <= np.trace(pred.cov) + 1e-12


def test_map_solve_equals_kalman_correction(rng):
    for _ in range(100):
        model = random_model(rng)
        prior = BeliefState(rng.standard_normal(3), random_spd(rng, 3))
        u, y = rng.standard_normal(1), rng.standard_normal(3)
        pred = project(model, prior, u)
        post = correct(model, pred, y)
        m = map_solve(model, prior.mean, u, spd_inverse(pred.cov), spd_inverse(model.obs_cov), y)
        np.testing.assert_allclose(m, post.mean, rtol=1e-8, atol=1e-10)


def test_map_solve_limits(rng):
    model = random_model(rng)
    mu, u, y = rng.standard_normal(3), rng.standard_normal(1), rng.standard_normal(3)
    prior_mean = model.A @ mu + model.B @ u
    m = map_solve(model, mu, u, np.eye(3), 1e-14 * np.eye(3), y)
    np.testing.assert_allclose(m, prior_mean, atol=1e-8)
    m = map_solve(model, mu, u, 1e-14 * np.eye(3), np.eye(3), y)
    np.testing.assert_allclose(m, np.linalg.solve(model.C, y), rtol=1e-8, atol=1e-8)


def test_map_solve_indefinite(rng):
    model = random_model(rng)
    with pytest.raises(NotPositiveDefiniteError):
        map_solve(model, np.zeros(3), [0.0], -np.eye(3), np.zeros((3, 3)), np.zeros(3))


def test_filter_covariances_psd_over_long_run():
    model = kinematic_model(seed=0)
    traj = simulate(model, np.zeros(3), control_schedule(1.0, 0.05, 2000), seed=0)
    posts, priors = filter_trajectory(model, BeliefState(np.zeros(3), np.zeros((3, 3))), traj,
                                      return_predicted=True)
    assert len(posts) == 2000
    for b in posts + priors:
        assert is_psd(b.cov, 1e-8)


def test_noiseless_filter_is_exact():
    model = kinematic_model(q_std=0.0, r_std=1e-9, seed=1)
    traj = simulate(model, np.zeros(3), control_schedule(1.0, 0.05, 100), seed=1)
    posts = filter_trajectory(model, BeliefState(np.zeros(3), np.zeros((3, 3))), traj)
    np.testing.assert_allclose([b.mean for b in posts], traj.states[1:], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-1.2, 1.2), c=st.floats(0.2, 3.0), q=st.floats(0.05, 5.0), r=st.floats(0.05, 5.0))
def test_scalar_riccati_closed_form(a, c, q, r):
    model = LinearGaussianModel([[a]], [[0.0]], [[c]], [[q]], [[r]])
    belief = BeliefState([0.0], [[0.0]])
    for _ in range(3000):
        pred = project(model, belief, [0.0])
        belief = correct(model, pred, [0.0])
        if abs(pred.cov[0, 0] - scalar_riccati_root(a, c, q, r)) < 1e-12:
            break
    np.testing.assert_allclose(pred.cov[0, 0], scalar_riccati_root(a, c, q, r), rtol=1e-9)
