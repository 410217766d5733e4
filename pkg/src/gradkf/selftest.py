"""Built-in oracle checks run by ``gradkf selftest``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import gradient
from .analytic import BeliefState, correct, filter_trajectory, map_solve, project
from .gradient import GradientFilterState, InferenceConfig, compute_errors, grad_A, grad_B, grad_C, grad_mu, infer
from .model import LinearGaussianModel, control_schedule, kinematic_model, simulate
from .numerics import finite_diff_grad, finite_diff_matrix_grad, is_psd, spd_inverse

__all__ = ["CheckResult", "random_instance", "run_checks"]

SEED = 20240611
N_INSTANCES = 20


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _spd(rng, n):
    g = rng.standard_normal((n, n))
    return g.T @ g / n + np.eye(n)


def random_instance(rng, n=3, m=3, k=1):
    """Random filter state plus one step of data with well-conditioned precisions."""
    state = GradientFilterState(
        A_hat=rng.standard_normal((n, n)), B_hat=rng.standard_normal((n, k)),
        C_hat=rng.standard_normal((m, n)), pi_x=_spd(rng, n), pi_z=_spd(rng, m),
        mu=rng.standard_normal(n),
    )
    return state, rng.standard_normal(n), rng.standard_normal(k), rng.standard_normal(m), rng.standard_normal(n)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(1e-12, float(np.max(np.abs(b)))))


def _check_grad_mu(rng):
    worst = 0.0
    for _ in range(N_INSTANCES):
        st, mu_prev, u, y, mu = random_instance(rng)
        g = grad_mu(st, compute_errors(st, mu, mu_prev, u, y))
        fd = finite_diff_grad(lambda v: 0.5 * gradient.loss(st, v, mu_prev, u, y), mu)
        worst = max(worst, _rel(g, fd))
    return worst <= 1e-5, f"max relative error {worst:.2e}"


def _check_matrix_grads(rng):
    worst = 0.0
    for _ in range(N_INSTANCES):
        st, mu_prev, u, y, mu = random_instance(rng)
        err = compute_errors(st, mu, mu_prev, u, y)
        for attr, analytic in (("A_hat", grad_A(st, err, mu_prev)),
                               ("B_hat", grad_B(st, err, u)),
                               ("C_hat", grad_C(st, err, mu))):
            def f(M, attr=attr):
                saved = getattr(st, attr)
                setattr(st, attr, M)
                try:
                    return 0.5 * gradient.loss(st, mu, mu_prev, u, y)
                finally:
                    setattr(st, attr, saved)
            worst = max(worst, _rel(analytic, finite_diff_matrix_grad(f, getattr(st, attr))))
    return worst <= 1e-5, f"max relative error {worst:.2e}"


def _check_map_vs_kalman(rng):
    worst = 0.0
    for _ in range(N_INSTANCES):
        model = LinearGaussianModel(rng.standard_normal((3, 3)), rng.standard_normal((3, 1)),
                                    rng.standard_normal((3, 3)), _spd(rng, 3), _spd(rng, 3))
        prior = BeliefState(rng.standard_normal(3), _spd(rng, 3))
        u, y = rng.standard_normal(1), rng.standard_normal(3)
        pred = project(model, prior, u)
        post = correct(model, pred, y)
        m = map_solve(model, prior.mean, u, spd_inverse(pred.cov), spd_inverse(model.obs_cov), y)
        worst = max(worst, _rel(m, post.mean))
    return worst <= 1e-8, f"max relative error {worst:.2e}"


def _check_infer_converges(rng):
    worst = 0.0
    cfg = InferenceConfig(n_steps=500)
    for _ in range(N_INSTANCES):
        st, mu_prev, u, y, _ = random_instance(rng)
        model = LinearGaussianModel(st.A_hat, st.B_hat, st.C_hat, np.eye(3), np.eye(3))
        exact = map_solve(model, mu_prev, u, st.pi_x, st.pi_z, y)
        worst = max(worst, _rel(infer(st, mu_prev, u, y, cfg), exact))
    return worst <= 1e-6, f"max relative error {worst:.2e}"


def _check_descent(rng):
    violations = 0
    for _ in range(N_INSTANCES):
        st, mu_prev, u, y, _ = random_instance(rng)
        trace: list = []
        infer(st, mu_prev, u, y, InferenceConfig(n_steps=20), trace=trace)
        violations += int(np.sum(np.diff(trace) > 1e-12 * max(1.0, trace[0])))
    return violations == 0, f"{violations} loss increases"


def _check_covariances_psd(rng):
    model = kinematic_model(seed=int(rng.integers(1 << 30)))
    traj = simulate(model, np.zeros(3), control_schedule(1.0, 0.05, 300), seed=1)
    posts, priors = filter_trajectory(model, BeliefState(np.zeros(3), np.zeros((3, 3))), traj,
                                      return_predicted=True)
    bad = sum(not is_psd(b.cov, 1e-8) for b in posts + priors)
    return bad == 0, f"{bad} of {2 * len(posts)} covariances not PSD"


CHECKS: List[tuple] = [
    ("grad_mu matches finite differences", _check_grad_mu),
    ("matrix gradients match finite differences", _check_matrix_grads),
    ("map_solve equals Kalman correction", _check_map_vs_kalman),
    ("500-step inference reaches map_solve", _check_infer_converges),
    ("inference loss is monotone", _check_descent),
    ("filter covariances are PSD", _check_covariances_psd),
]


def run_checks(inject_fault: bool = False, report: Callable[[CheckResult], None] = None) -> List[CheckResult]:
    """Run every check; with ``inject_fault`` the sign of ``grad_mu`` is flipped first."""
    results = []
    saved = gradient._FLIP_GRAD_MU_SIGN
    gradient._FLIP_GRAD_MU_SIGN = inject_fault
    try:
        for i, (name, fn) in enumerate(CHECKS):
            rng = np.random.default_rng([SEED, i])
            try:
                ok, detail = fn(rng)
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            res = CheckResult(name, bool(ok), detail)
            results.append(res)
            if report is not None:
                report(res)
    finally:
        gradient._FLIP_GRAD_MU_SIGN = saved
    return results
