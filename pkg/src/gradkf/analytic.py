"""Exact Kalman filter and the closed-form MAP solve of the per-step objective.

:func:`project` and :func:`correct` are the two halves of the standard
recursion.  :func:`map_solve` reaches the same posterior mean a second
way: it minimizes the precision-weighted objective

    (y - C m)^T R (y - C m) + (m - A mu - B u)^T P (m - A mu - B u)

directly by solving its normal equations.  Agreement of the two is the
matrix-inversion-lemma identity behind the Kalman gain, and the
gradient filter converges to this same minimizer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .model import LinearGaussianModel, Trajectory
from .numerics import (
    DimensionError,
    NotPositiveDefiniteError,
    as_matrix,
    as_vector,
    is_psd,
    solve_spd,
    symmetrize,
)

__all__ = [
    "BeliefState",
    "DegenerateObservationError",
    "project",
    "kalman_gain",
    "correct",
    "filter_trajectory",
    "map_solve",
]

PSD_TOL = 1e-8


class DegenerateObservationError(NotPositiveDefiniteError):
    """The innovation covariance ``C P C^T + obs_cov`` is not positive-definite."""


def _psd_tol(cov):
    return PSD_TOL * max(1.0, float(np.max(np.abs(cov))))


@dataclass(frozen=True)
class BeliefState:
    """Gaussian belief over the state: mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = as_matrix(self.cov, "cov")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionError(f"covariance {cov.shape} does not match mean {mean.shape}", cov.shape, mean.shape)
        if not is_psd(cov, _psd_tol(cov)):
            raise ValueError("belief covariance is not symmetric positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _predict_cov(A, cov, Q):
    return symmetrize(A @ cov @ A.T + Q)


def project(model: LinearGaussianModel, belief: BeliefState, u) -> BeliefState:
    """Push the belief through the dynamics: ``A mu + B u`` and ``A S A^T + Q``."""
    u = as_vector(u, "u")
    if belief.mean.shape[0] != model.n_state or u.shape[0] != model.n_control:
        raise DimensionError(
            f"belief of size {belief.mean.shape[0]} / control of size {u.shape[0]} "
            f"do not fit a model with n={model.n_state}, k={model.n_control}",
            belief.mean.shape, u.shape,
        )
    mean = model.A @ belief.mean + model.B @ u
    return BeliefState(mean, _predict_cov(model.A, belief.cov, model.process_cov))


def kalman_gain(model: LinearGaussianModel, predicted_cov) -> np.ndarray:
    """Gain ``K`` with ``K (C P C^T + obs_cov) = P C^T``.

    The innovation covariance is factorized and solved against rather
    than inverted.

    Raises
    ------
    DegenerateObservationError
        If the innovation covariance is singular or indefinite.
    """
    P = as_matrix(predicted_cov, "predicted_cov")
    if P.shape != (model.n_state, model.n_state):
        raise DimensionError(f"predicted_cov {P.shape} does not match n={model.n_state}", P.shape)
    C = model.C
    S = symmetrize(C @ P @ C.T + model.obs_cov)
    try:
        # S is symmetric, so K^T = S^{-1} C P
        return solve_spd(S, C @ P).T
    except NotPositiveDefiniteError as exc:
        raise DegenerateObservationError(
            "innovation covariance is not positive-definite (degenerate observation noise)"
        ) from exc


def correct(model: LinearGaussianModel, predicted: BeliefState, y) -> BeliefState:
    """Fold in observation ``y``.

    Mean ``mu + K (y - C mu)``, covariance ``(I - K C) P`` re-symmetrized.
    """
    y = as_vector(y, "y")
    if y.shape[0] != model.n_obs:
        raise DimensionError(f"observation has length {y.shape[0]}, expected {model.n_obs}", y.shape)
    K = kalman_gain(model, predicted.cov)
    mean = predicted.mean + K @ (y - model.C @ predicted.mean)
    cov = symmetrize((np.eye(model.n_state) - K @ model.C) @ predicted.cov)
    return BeliefState(mean, cov)


def filter_trajectory(model: LinearGaussianModel, initial: BeliefState, traj: Trajectory,
                      return_predicted: bool = False):
    """Run project/correct over every step of ``traj``.

    Returns the list of posterior beliefs for ``t = 1..T``; with
    ``return_predicted=True`` the projected beliefs are returned as a
    second list.
    """
    if traj.states.shape[1] != model.n_state or traj.observations.shape[1] != model.n_obs:
        raise DimensionError("trajectory dimensions do not match the model",
                             traj.states.shape, traj.observations.shape)
    belief = initial
    posts: List[BeliefState] = []
    priors: List[BeliefState] = []
    for u, y in zip(traj.controls, traj.observations):
        predicted = project(model, belief, u)
        belief = correct(model, predicted, y)
        priors.append(predicted)
        posts.append(belief)
    if return_predicted:
        return posts, priors
    return posts


def map_solve(model: LinearGaussianModel, mu_prev, u, prior_precision, obs_precision, y) -> np.ndarray:
    """Exact minimizer of the precision-weighted one-step objective.

    Solves ``(C^T R C + P) m = C^T R y + P (A mu_prev + B u)`` where ``P``
    is ``prior_precision`` and ``R`` is ``obs_precision``.

    Raises
    ------
    NotPositiveDefiniteError
        If the normal-equations matrix is not positive-definite.
    """
    mu_prev = as_vector(mu_prev, "mu_prev")
    u = as_vector(u, "u")
    y = as_vector(y, "y")
    P = as_matrix(prior_precision, "prior_precision")
    R = as_matrix(obs_precision, "obs_precision")
    n, m = model.n_state, model.n_obs
    if P.shape != (n, n) or R.shape != (m, m) or mu_prev.shape[0] != n or y.shape[0] != m:
        raise DimensionError("map_solve operands do not match the model", P.shape, R.shape, mu_prev.shape, y.shape)
    C = model.C
    prior_mean = model.A @ mu_prev + model.B @ u
    normal = symmetrize(C.T @ R @ C + P)
    rhs = C.T @ R @ y + P @ prior_mean
    return solve_spd(normal, rhs)
