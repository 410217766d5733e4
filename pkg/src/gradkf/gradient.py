"""Gradient-descent filter with Hebbian learning of the model matrices.

Each timestep minimizes the precision-weighted prediction-error loss

    L(m) = e_z^T Pz e_z + e_x^T Px e_x,
    e_x = m - A_hat mu_prev - B_hat u      (dynamical error)
    e_z = y - C_hat m                      (sensory error)

by a few plain gradient steps on ``m``.  The loss gradients with respect
to ``A_hat``, ``B_hat`` and ``C_hat`` are outer products of a
precision-weighted error with a presynaptic activity, so every weight
update is a local Hebbian rule.

The gradient functions below return the gradient of ``L / 2``, the
negative log posterior up to a constant.  The fixed points and
descent directions are unchanged; the finite-difference checks in the
test-suite account for the factor explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .model import LinearGaussianModel
from .numerics import (
    DimensionError,
    as_matrix,
    as_vector,
    is_psd,
    power_iteration,
    solve_spd,
    spd_inverse,
    symmetrize,
)

__all__ = [
    "DivergenceError",
    "InferenceConfig",
    "GradientFilterState",
    "PredictionErrors",
    "StepDiagnostics",
    "loss",
    "compute_errors",
    "grad_mu",
    "grad_A",
    "grad_B",
    "grad_C",
    "curvature",
    "step_size",
    "infer",
    "step",
]

_LEARNABLE = ("A", "B", "C")
PRECISION_MODES = ("fixed", "projected")


class DivergenceError(FloatingPointError):
    """The iterate or a learned weight stopped being finite."""

    def __init__(self, message, step=None, timestep=None):
        self.step = step
        self.timestep = timestep
        super().__init__(message)


@dataclass
class InferenceConfig:
    """Knobs of the per-timestep descent and of the weight learning.

    ``eta_mu`` is either ``"auto"`` (use ``1 / lambda_max`` of the loss
    curvature) or a number, which is then clamped to that same bound.
    ``learn`` names the matrices updated online, any of ``"A"``, ``"B"``,
    ``"C"``.  ``init="prediction"`` starts the descent at
    ``A_hat mu_prev + B_hat u``; ``"previous"`` starts at ``mu_prev``.
    ``interleave=True`` applies a weight update after every descent
    iteration instead of once at the converged estimate.
    """

    n_steps: int = 5
    eta_mu: object = "auto"
    lr_A: float = 1e-5
    lr_B: float = 1e-5
    lr_C: float = 1e-5
    learn: Tuple[str, ...] = ()
    init: str = "prediction"
    interleave: bool = False
    power_iters: int = 20
    record_trace: bool = False

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        self.n_steps = int(self.n_steps)
        if isinstance(self.eta_mu, str):
            if self.eta_mu != "auto":
                raise ValueError(f"eta_mu must be 'auto' or a positive number, got {self.eta_mu!r}")
        elif not float(self.eta_mu) > 0:
            raise ValueError(f"eta_mu must be positive, got {self.eta_mu}")
        for name in ("lr_A", "lr_B", "lr_C"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if isinstance(self.learn, str):
            self.learn = tuple(self.learn.upper())
        self.learn = tuple(sorted(set(self.learn)))
        bad = [x for x in self.learn if x not in _LEARNABLE]
        if bad:
            raise ValueError(f"unknown learnable matrices {bad}; choose from {_LEARNABLE}")
        if self.init not in ("prediction", "previous"):
            raise ValueError("init must be 'prediction' or 'previous'")


@dataclass
class PredictionErrors:
    eps_x: np.ndarray
    eps_z: np.ndarray


@dataclass
class StepDiagnostics:
    mu: np.ndarray
    loss_before: float
    loss_after: float
    errors: PredictionErrors
    eta: float
    loss_trace: Optional[List[float]] = None


@dataclass
class GradientFilterState:
    """Mutable filter state owned by a single run.

    ``pi_x`` and ``pi_z`` weight the dynamical and sensory errors.  In
    ``"fixed"`` precision mode they stay at the inverse noise covariances.
    In ``"projected"`` mode ``pi_x`` is recomputed every step as the
    inverse of the projected covariance ``A_hat S A_hat^T + Q``, with ``S``
    carried forward by the covariance half of the Kalman recursion run on
    the current estimates.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray
    pi_x: np.ndarray
    pi_z: np.ndarray
    mu: np.ndarray
    precision: str = "fixed"
    process_cov: Optional[np.ndarray] = None
    obs_cov: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    t: int = field(default=0)

    def __post_init__(self):
        self.A_hat = as_matrix(self.A_hat, "A_hat").copy()
        self.B_hat = as_matrix(self.B_hat, "B_hat").copy()
        self.C_hat = as_matrix(self.C_hat, "C_hat").copy()
        self.pi_x = as_matrix(self.pi_x, "pi_x").copy()
        self.pi_z = as_matrix(self.pi_z, "pi_z").copy()
        self.mu = as_vector(self.mu, "mu").copy()
        n = self.A_hat.shape[0]
        m = self.C_hat.shape[0]
        if (self.A_hat.shape != (n, n) or self.B_hat.shape[0] != n or self.C_hat.shape[1] != n
                or self.pi_x.shape != (n, n) or self.pi_z.shape != (m, m) or self.mu.shape != (n,)):
            raise DimensionError(
                "inconsistent gradient-filter shapes",
                self.A_hat.shape, self.B_hat.shape, self.C_hat.shape, self.pi_x.shape, self.pi_z.shape,
            )
        for name in ("pi_x", "pi_z"):
            w = getattr(self, name)
            if not is_psd(w, 1e-10 * max(1.0, float(np.max(np.abs(w))))):
                raise ValueError(f"{name} must be symmetric positive semi-definite")
        if self.precision not in PRECISION_MODES:
            raise ValueError(f"precision must be one of {PRECISION_MODES}")
        if self.precision == "projected":
            if self.process_cov is None or self.obs_cov is None:
                raise ValueError("projected precision needs process_cov and obs_cov")
            self.process_cov = as_matrix(self.process_cov, "process_cov")
            self.obs_cov = as_matrix(self.obs_cov, "obs_cov")
            self.cov = np.zeros((n, n)) if self.cov is None else as_matrix(self.cov, "cov").copy()

    @classmethod
    def from_model(cls, model: LinearGaussianModel, mu0=None, precision="fixed",
                   A_hat=None, B_hat=None, C_hat=None, cov0=None) -> "GradientFilterState":
        """State whose weights start at ``model`` unless overridden."""
        n = model.n_state
        pi_z = spd_inverse(model.obs_cov)
        if precision == "fixed":
            pi_x = spd_inverse(model.process_cov)
        else:
            pi_x = np.eye(n)  # replaced before first use
        return cls(
            A_hat=model.A if A_hat is None else A_hat,
            B_hat=model.B if B_hat is None else B_hat,
            C_hat=model.C if C_hat is None else C_hat,
            pi_x=pi_x,
            pi_z=pi_z,
            mu=np.zeros(n) if mu0 is None else mu0,
            precision=precision,
            process_cov=model.process_cov,
            obs_cov=model.obs_cov,
            cov=cov0,
        )

    @property
    def n_state(self):
        return self.A_hat.shape[0]

    @property
    def n_obs(self):
        return self.C_hat.shape[0]

    @property
    def n_control(self):
        return self.B_hat.shape[1]

    def snapshot(self) -> dict:
        return {"A_hat": self.A_hat.copy(), "B_hat": self.B_hat.copy(), "C_hat": self.C_hat.copy()}


def _check_args(state, mu_next, mu_prev, u, y):
    mu_next = as_vector(mu_next, "mu_next")
    mu_prev = as_vector(mu_prev, "mu_prev")
    u = as_vector(u, "u")
    y = as_vector(y, "y")
    n, m, k = state.n_state, state.n_obs, state.n_control
    if mu_next.shape[0] != n or mu_prev.shape[0] != n or u.shape[0] != k or y.shape[0] != m:
        raise DimensionError(
            f"expected mu of size {n}, u of size {k}, y of size {m}",
            mu_next.shape, mu_prev.shape, u.shape, y.shape,
        )
    return mu_next, mu_prev, u, y


def _errors(state, mu_next, mu_prev, u, y):
    eps_x = mu_next - state.A_hat @ mu_prev - state.B_hat @ u
    eps_z = y - state.C_hat @ mu_next
    return PredictionErrors(eps_x, eps_z)


def _loss(state, err):
    return float(err.eps_z @ state.pi_z @ err.eps_z + err.eps_x @ state.pi_x @ err.eps_x)


# test hook: selftest flips this to prove the gradient check can fail
_FLIP_GRAD_MU_SIGN = False


def _grad_mu(state, err):
    g = state.pi_x @ err.eps_x - state.C_hat.T @ (state.pi_z @ err.eps_z)
    return -g if _FLIP_GRAD_MU_SIGN else g


def compute_errors(state: GradientFilterState, mu_next, mu_prev, u, y) -> PredictionErrors:
    """Dynamical error ``mu_next - A_hat mu_prev - B_hat u`` and sensory error ``y - C_hat mu_next``."""
    return _errors(state, *_check_args(state, mu_next, mu_prev, u, y))


def loss(state: GradientFilterState, mu_next, mu_prev, u, y) -> float:
    """Sum of the two precision-weighted squared prediction errors (never negative)."""
    return _loss(state, compute_errors(state, mu_next, mu_prev, u, y))


def grad_mu(state: GradientFilterState, errors: PredictionErrors) -> np.ndarray:
    """``-C_hat^T pi_z eps_z + pi_x eps_x``."""
    if errors.eps_x.shape != (state.n_state,) or errors.eps_z.shape != (state.n_obs,):
        raise DimensionError("prediction errors do not match the state", errors.eps_x.shape, errors.eps_z.shape)
    return _grad_mu(state, errors)


def grad_A(state: GradientFilterState, errors: PredictionErrors, mu_prev) -> np.ndarray:
    """Hebbian term ``-(pi_x eps_x) mu_prev^T``: error times the previous estimate."""
    mu_prev = as_vector(mu_prev, "mu_prev")
    if mu_prev.shape[0] != state.n_state or errors.eps_x.shape != (state.n_state,):
        raise DimensionError("grad_A operands do not match", mu_prev.shape, errors.eps_x.shape)
    return -np.outer(state.pi_x @ errors.eps_x, mu_prev)


def grad_B(state: GradientFilterState, errors: PredictionErrors, u) -> np.ndarray:
    """Hebbian term ``-(pi_x eps_x) u^T``: error times the control."""
    u = as_vector(u, "u")
    if u.shape[0] != state.n_control or errors.eps_x.shape != (state.n_state,):
        raise DimensionError("grad_B operands do not match", u.shape, errors.eps_x.shape)
    return -np.outer(state.pi_x @ errors.eps_x, u)


def grad_C(state: GradientFilterState, errors: PredictionErrors, mu_next) -> np.ndarray:
    """Hebbian term ``-(pi_z eps_z) mu_next^T``: sensory error times the estimate."""
    mu_next = as_vector(mu_next, "mu_next")
    if mu_next.shape[0] != state.n_state or errors.eps_z.shape != (state.n_obs,):
        raise DimensionError("grad_C operands do not match", mu_next.shape, errors.eps_z.shape)
    return -np.outer(state.pi_z @ errors.eps_z, mu_next)


def curvature(state: GradientFilterState) -> np.ndarray:
    """Hessian of ``L / 2`` in ``mu``: ``C_hat^T pi_z C_hat + pi_x``."""
    return symmetrize(state.C_hat.T @ state.pi_z @ state.C_hat + state.pi_x)


def step_size(state: GradientFilterState, cfg: InferenceConfig) -> float:
    """Descent step, never above ``1 / lambda_max`` of the curvature.

    ``lambda_max`` comes from ``cfg.power_iters`` rounds of power
    iteration.
    """
    lam = power_iteration(curvature(state), cfg.power_iters)
    if not lam > 0:
        raise ValueError("loss curvature is zero; the estimate is unconstrained")
    bound = 1.0 / lam
    if cfg.eta_mu == "auto":
        return bound
    return min(float(cfg.eta_mu), bound)


def _descend(state, mu, mu_prev, u, y, eta, n_steps, trace, after_iter=None):
    for i in range(n_steps):
        err = _errors(state, mu, mu_prev, u, y)
        mu = mu - eta * _grad_mu(state, err)
        if not np.all(np.isfinite(mu)):
            raise DivergenceError(f"estimate became non-finite at descent iteration {i + 1}", step=i + 1)
        if after_iter is not None:
            after_iter(mu)
        if trace is not None:
            trace.append(_loss(state, _errors(state, mu, mu_prev, u, y)))
    return mu


def _initial_mu(state, mu_prev, u, cfg):
    if cfg.init == "prediction":
        return state.A_hat @ mu_prev + state.B_hat @ u
    return mu_prev.copy()


def infer(state: GradientFilterState, mu_prev, u, y, cfg: InferenceConfig,
          trace: Optional[list] = None) -> np.ndarray:
    """Estimate ``mu_{t+1}`` with ``cfg.n_steps`` gradient steps on the loss.

    Parameters
    ----------
    state : GradientFilterState
        Supplies the weights and precisions; it is not modified.
    mu_prev, u, y : array_like
        Previous estimate, control applied, new observation.
    cfg : InferenceConfig
    trace : list, optional
        If given, the loss at the starting point and after every
        iteration is appended to it.

    Raises
    ------
    DivergenceError
        If the iterate leaves the finite range; ``err.step`` is the
        iteration at which that happened.
    """
    _, mu_prev, u, y = _check_args(state, state.mu if mu_prev is None else mu_prev, mu_prev, u, y)
    eta = step_size(state, cfg)
    with np.errstate(over="ignore", invalid="ignore"):
        mu = _initial_mu(state, mu_prev, u, cfg)
        if trace is not None:
            trace.append(_loss(state, _errors(state, mu, mu_prev, u, y)))
        return _descend(state, mu, mu_prev, u, y, eta, cfg.n_steps, trace)


def _update_projected_precision(state):
    pred = symmetrize(state.A_hat @ state.cov @ state.A_hat.T + state.process_cov)
    state.pi_x = spd_inverse(pred)
    return pred


def _posterior_cov(state, pred, C):
    S = symmetrize(C @ pred @ C.T + state.obs_cov)
    K = solve_spd(S, C @ pred).T
    return symmetrize((np.eye(state.n_state) - K @ C) @ pred)


def _apply_learning(state, cfg, err, mu_prev, mu_next, u):
    updates = {}
    if "A" in cfg.learn:
        updates["A_hat"] = cfg.lr_A * grad_A(state, err, mu_prev)
    if "B" in cfg.learn:
        updates["B_hat"] = cfg.lr_B * grad_B(state, err, u)
    if "C" in cfg.learn:
        updates["C_hat"] = cfg.lr_C * grad_C(state, err, mu_next)
    # all gradients are taken at the same point before any weight moves
    for name, delta in updates.items():
        new = getattr(state, name) - delta
        if not np.all(np.isfinite(new)):
            raise DivergenceError(f"non-finite update of {name}; use a smaller learning rate")
        setattr(state, name, new)


def _infer_and_learn(state, mu_prev, u, y, cfg):
    eta = step_size(state, cfg)
    mu = _initial_mu(state, mu_prev, u, cfg)
    loss_before = _loss(state, _errors(state, mu, mu_prev, u, y))
    trace = [loss_before] if cfg.record_trace else None
    after = None
    if cfg.interleave and cfg.learn:
        def after(m):
            _apply_learning(state, cfg, _errors(state, m, mu_prev, u, y), mu_prev, m, u)
    mu = _descend(state, mu, mu_prev, u, y, eta, cfg.n_steps, trace, after)
    err = _errors(state, mu, mu_prev, u, y)
    loss_after = _loss(state, err)
    if cfg.learn and not cfg.interleave:
        _apply_learning(state, cfg, err, mu_prev, mu, u)
    if not np.isfinite(loss_after):
        raise DivergenceError("loss overflowed")
    return StepDiagnostics(mu=mu, loss_before=loss_before, loss_after=loss_after,
                           errors=err, eta=eta, loss_trace=trace)


def step(state: GradientFilterState, u, y, cfg: InferenceConfig) -> Tuple[GradientFilterState, StepDiagnostics]:
    """Advance the filter by one observation, learning the enabled matrices.

    The state is updated in place and also returned.

    Raises
    ------
    DivergenceError
        With ``timestep`` set to the 1-based index of the failing step.
    """
    mu_prev = state.mu
    u = as_vector(u, "u")
    y = as_vector(y, "y")
    _check_args(state, mu_prev, mu_prev, u, y)
    pred = _update_projected_precision(state) if state.precision == "projected" else None
    # the covariance update uses the C_hat that inference saw
    C_used = state.C_hat
    try:
        # overflow surfaces as DivergenceError, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            diag = _infer_and_learn(state, mu_prev, u, y, cfg)
    except DivergenceError as exc:
        exc.timestep = state.t + 1
        raise
    if pred is not None:
        state.cov = _posterior_cov(state, pred, C_used)
    state.mu = diag.mu
    state.t += 1
    return state, diag


def run_filter(state: GradientFilterState, controls, observations, cfg: InferenceConfig,
               callback: Optional[Callable[[int, StepDiagnostics], None]] = None):
    """Filter a whole sequence; returns ``(means, losses)`` arrays.

    ``losses[t]`` is the loss at the estimate returned for step ``t``.
    """
    U = np.asarray(controls, dtype=float)
    Y = np.asarray(observations, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    T = Y.shape[0]
    means = np.empty((T, state.n_state))
    losses = np.empty(T)
    for t in range(T):
        _, diag = step(state, U[t], Y[t], cfg)
        means[t] = diag.mu
        losses[t] = diag.loss_after
        if callback is not None:
            callback(t, diag)
    return means, losses
