"""scikit-learn style wrappers around the exact and gradient filters.

``X`` is an observation sequence of shape ``(T, m)`` and ``U`` the
matching control sequence ``(T, k)``; ``U[t]`` drives the transition
that ``X[t]`` observes.  ``transform`` returns filtered state means
``(T, n)``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analytic import BeliefState, filter_trajectory
from .gradient import GradientFilterState, InferenceConfig, run_filter
from .model import LinearGaussianModel, Trajectory

__all__ = ["KalmanFilter", "GradientKalmanFilter"]


def _check_sequences(X, U, n_obs, n_control):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != n_obs:
        raise ValueError(f"X has {X.shape[1]} features, the model observes {n_obs}")
    if U is None:
        U = np.zeros((X.shape[0], n_control))
    U = check_array(U, dtype=np.float64, ensure_2d=False)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape != (X.shape[0], n_control):
        raise ValueError(f"U must have shape {(X.shape[0], n_control)}, got {U.shape}")
    return X, U


def _model(est) -> LinearGaussianModel:
    return LinearGaussianModel(est.A, est.B, est.C, est.process_cov, est.obs_cov)


class KalmanFilter(TransformerMixin, BaseEstimator):
    """Exact filter for a known linear-Gaussian model.

    Parameters
    ----------
    A, B, C : array_like
        Dynamics, control and observation matrices.
    process_cov, obs_cov : array_like
        Noise covariances.
    initial_mean, initial_cov : array_like, optional
        Belief before the first observation; zeros by default.

    Attributes
    ----------
    means_ : ndarray of shape (T, n)
        Filtered means from the last :meth:`fit`.
    covariances_ : ndarray of shape (T, n, n)
    n_features_in_ : int
    """

    def __init__(self, A, B, C, process_cov, obs_cov, initial_mean=None, initial_cov=None):
        self.A = A
        self.B = B
        self.C = C
        self.process_cov = process_cov
        self.obs_cov = obs_cov
        self.initial_mean = initial_mean
        self.initial_cov = initial_cov

    def _initial(self, model):
        n = model.n_state
        mean = np.zeros(n) if self.initial_mean is None else self.initial_mean
        cov = np.zeros((n, n)) if self.initial_cov is None else self.initial_cov
        return BeliefState(mean, cov)

    def _filter(self, X, U):
        model = _model(self)
        X, U = _check_sequences(X, U, model.n_obs, model.n_control)
        states = np.zeros((X.shape[0] + 1, model.n_state))  # unused by the filter
        posts = filter_trajectory(model, self._initial(model), Trajectory(states, U, X))
        return np.array([b.mean for b in posts]), np.array([b.cov for b in posts])

    def fit(self, X, y=None, U=None):
        self.means_, self.covariances_ = self._filter(X, U)
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def transform(self, X, U=None):
        check_is_fitted(self, "means_")
        return self._filter(X, U)[0]

    def fit_transform(self, X, y=None, U=None):
        return self.fit(X, U=U).means_


class GradientKalmanFilter(TransformerMixin, BaseEstimator):
    """Gradient-descent filter that can learn ``A``, ``B`` and ``C`` online.

    :meth:`fit` runs the filter over ``X`` with learning switched on for
    the matrices listed in ``learn``; :meth:`transform` filters with the
    learned matrices held fixed.

    Parameters
    ----------
    A, B, C : array_like
        Initial estimates of the model matrices.
    process_cov, obs_cov : array_like
        Noise covariances; their inverses weight the prediction errors.
    n_steps : int, default=5
        Descent iterations per observation.
    eta_mu : float or "auto", default="auto"
        Descent step, clamped to ``1 / lambda_max`` of the loss curvature.
    learning_rate : float, default=1e-5
    learn : str, default=""
        Any combination of ``"A"``, ``"B"``, ``"C"``.
    precision : {"fixed", "projected"}, default="fixed"
    initial_mean : array_like, optional

    Attributes
    ----------
    A_, B_, C_ : ndarray
        Matrices after fitting.
    means_ : ndarray of shape (T, n)
    loss_ : ndarray of shape (T,)
        Per-step loss at the returned estimate during fitting.
    """

    def __init__(self, A, B, C, process_cov, obs_cov, n_steps=5, eta_mu="auto", learning_rate=1e-5,
                 learn="", precision="fixed", initial_mean=None):
        self.A = A
        self.B = B
        self.C = C
        self.process_cov = process_cov
        self.obs_cov = obs_cov
        self.n_steps = n_steps
        self.eta_mu = eta_mu
        self.learning_rate = learning_rate
        self.learn = learn
        self.precision = precision
        self.initial_mean = initial_mean

    def _config(self, learn):
        lr = self.learning_rate
        return InferenceConfig(n_steps=self.n_steps, eta_mu=self.eta_mu, lr_A=lr, lr_B=lr, lr_C=lr,
                               learn=tuple(self.learn.upper()) if learn else ())

    def _state(self, A, B, C):
        model = _model(self)
        return GradientFilterState.from_model(model, mu0=self.initial_mean, precision=self.precision,
                                              A_hat=A, B_hat=B, C_hat=C)

    def _run(self, X, U, A, B, C, learn):
        state = self._state(A, B, C)
        X, U = _check_sequences(X, U, state.n_obs, state.n_control)
        means, losses = run_filter(state, U, X, self._config(learn))
        return state, means, losses

    def fit(self, X, y=None, U=None):
        state, self.means_, self.loss_ = self._run(X, U, self.A, self.B, self.C, True)
        self.A_, self.B_, self.C_ = state.A_hat, state.B_hat, state.C_hat
        self.n_features_in_ = state.n_obs
        return self

    def partial_fit(self, X, y=None, U=None):
        """Continue learning from the current matrices on more data."""
        if not hasattr(self, "A_"):
            return self.fit(X, U=U)
        state, self.means_, self.loss_ = self._run(X, U, self.A_, self.B_, self.C_, True)
        self.A_, self.B_, self.C_ = state.A_hat, state.B_hat, state.C_hat
        return self

    def transform(self, X, U=None):
        check_is_fitted(self, "A_")
        return self._run(X, U, self.A_, self.B_, self.C_, False)[1]

    def fit_transform(self, X, y=None, U=None):
        return self.fit(X, U=U).means_

    def score(self, X, y=None, U=None) -> float:
        """Negative mean per-step loss with the fitted matrices (higher is better)."""
        check_is_fitted(self, "A_")
        return -float(np.mean(self._run(X, U, self.A_, self.B_, self.C_, False)[2]))
