"""Linear-Gaussian state-space model, seeded simulation and trajectory CSV I/O.

The generative model is::

    x[t+1] = A x[t] + B u[t] + w,   w ~ N(0, process_cov)
    y[t+1] = C x[t+1] + v,          v ~ N(0, obs_cov)

Random streams
--------------
All randomness is drawn from numpy's ``PCG64`` generator.  A run seed is
split into independent labelled sub-streams with
``SeedSequence([seed, label])`` so that, for example, changing how many
process-noise draws are made never shifts the observation noise.  The
labels are listed in :data:`STREAMS`.
"""
from __future__ import annotations

import csv
import io
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import DimensionError, as_matrix, as_vector, is_psd, matmul

__all__ = [
    "STREAMS",
    "LinearGaussianModel",
    "Trajectory",
    "rng_for",
    "step_dynamics",
    "observe",
    "simulate",
    "kinematic_model",
    "control_schedule",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "format_float",
]

STREAMS = {
    "process": 1,
    "observation": 2,
    "c_matrix": 3,
    "init_A": 4,
    "init_B": 5,
    "init_C": 6,
}


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for one labelled sub-stream of ``seed``."""
    if stream not in STREAMS:
        raise KeyError(f"unknown random stream {stream!r}; known: {sorted(STREAMS)}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), STREAMS[stream]])))


def format_float(x: float) -> str:
    """17 significant digits, enough for an exact double round-trip."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class LinearGaussianModel:
    """Dynamics ``A``, control ``B``, observation ``C`` and noise covariances."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    process_cov: np.ndarray
    obs_cov: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        Q = as_matrix(self.process_cov, "process_cov")
        R = as_matrix(self.obs_cov, "obs_cov")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}", A.shape)
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows but A is {A.shape}", B.shape, A.shape)
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns but A is {A.shape}", C.shape, A.shape)
        if Q.shape != (n, n):
            raise DimensionError(f"process_cov must be {(n, n)}, got {Q.shape}", Q.shape)
        m = C.shape[0]
        if R.shape != (m, m):
            raise DimensionError(f"obs_cov must be {(m, m)}, got {R.shape}", R.shape)
        if not is_psd(Q, 1e-10):
            raise ValueError("process_cov must be symmetric positive semi-definite")
        if not is_psd(R, 1e-10):
            raise ValueError("obs_cov must be symmetric positive semi-definite")
        for name, value in zip(("A", "B", "C", "process_cov", "obs_cov"), (A, B, C, Q, R)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    @property
    def n_control(self) -> int:
        return self.B.shape[1]

    @property
    def n_obs(self) -> int:
        return self.C.shape[0]

    def replace(self, **changes) -> "LinearGaussianModel":
        fields = dict(A=self.A, B=self.B, C=self.C, process_cov=self.process_cov, obs_cov=self.obs_cov)
        fields.update(changes)
        return LinearGaussianModel(**fields)


@dataclass(frozen=True)
class Trajectory:
    """Simulated states ``x[0..T]``, controls ``u[0..T-1]`` and observations ``y[1..T]``.

    Stored as arrays of shape ``(T+1, n)``, ``(T, k)`` and ``(T, m)``;
    ``observations[t-1]`` measures ``states[t]``.
    """

    states: np.ndarray
    controls: np.ndarray
    observations: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        x, u, y = (np.asarray(a, dtype=float) for a in (self.states, self.controls, self.observations))
        x, u, y = (a[:, None] if a.ndim == 1 else a for a in (x, u, y))
        T = u.shape[0]
        if x.shape[0] != T + 1 or y.shape[0] != T:
            raise DimensionError(
                f"inconsistent lengths: {x.shape[0]} states, {T} controls, {y.shape[0]} observations",
                x.shape, u.shape, y.shape,
            )
        for name, value in (("states", x), ("controls", u), ("observations", y)):
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} contain non-finite values")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def observation_digest(self) -> str:
        """SHA-256 of the raw observation bytes, used to prove two filters saw the same data."""
        return hashlib.sha256(np.ascontiguousarray(self.observations).tobytes()).hexdigest()


def _check_model_vec(model, v, size, name):
    v = as_vector(v, name)
    if v.shape[0] != size:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {size}", v.shape)
    return v


def step_dynamics(model: LinearGaussianModel, x, u, noise=None) -> np.ndarray:
    """Return ``A x + B u + noise`` (noise defaults to zero)."""
    x = _check_model_vec(model, x, model.n_state, "x")
    u = _check_model_vec(model, u, model.n_control, "u")
    out = matmul(model.A, x) + matmul(model.B, u)
    if noise is not None:
        out = out + _check_model_vec(model, noise, model.n_state, "noise")
    return out


def observe(model: LinearGaussianModel, x, noise=None) -> np.ndarray:
    """Return ``C x + noise``."""
    x = _check_model_vec(model, x, model.n_state, "x")
    out = matmul(model.C, x)
    if noise is not None:
        out = out + _check_model_vec(model, noise, model.n_obs, "noise")
    return out


def _gaussian_draws(rng, cov, size):
    # a zero covariance must give exact zeros, so bypass the sampler
    n = cov.shape[0]
    if not np.any(cov):
        return np.zeros((size, n))
    return rng.multivariate_normal(np.zeros(n), cov, size=size, method="eigh")


def simulate(model: LinearGaussianModel, x0, controls, seed: int) -> Trajectory:
    """Roll the model forward from ``x0`` under ``controls`` with seeded noise.

    The process and observation noise come from the ``"process"`` and
    ``"observation"`` sub-streams of ``seed``; the same seed always gives a
    bit-identical trajectory.
    """
    x = _check_model_vec(model, x0, model.n_state, "x0")
    U = np.asarray(controls, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.ndim != 2 or U.shape[0] < 1:
        raise ValueError("controls must be a non-empty sequence of control vectors")
    if U.shape[1] != model.n_control:
        raise DimensionError(f"controls have width {U.shape[1]}, model expects {model.n_control}", U.shape)
    T = U.shape[0]
    W = _gaussian_draws(rng_for(seed, "process"), model.process_cov, T)
    V = _gaussian_draws(rng_for(seed, "observation"), model.obs_cov, T)
    states = np.empty((T + 1, model.n_state))
    obs = np.empty((T, model.n_obs))
    states[0] = x
    A, B, C = model.A, model.B, model.C
    for t in range(T):
        x = A @ x + B @ U[t] + W[t]
        states[t + 1] = x
        obs[t] = C @ x + V[t]
    return Trajectory(states, U, obs, seed=seed)


def kinematic_model(dt: float = 0.001, q_std: float = 1.0, r_std: float = 1.0,
                    c_mode: str = "random", seed: int = 0) -> LinearGaussianModel:
    """Constant-acceleration body: state (position, velocity, acceleration).

    ``A`` is the exact kinematic transition for step ``dt`` and the scalar
    control pushes the acceleration through ``B = [0, 0, 1]^T``.  With
    ``c_mode="random"`` the 3x3 observation matrix has standard-normal
    entries drawn from the ``"c_matrix"`` stream of ``seed``; with
    ``"identity"`` the state is observed directly.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if q_std < 0 or r_std < 0:
        raise ValueError("noise standard deviations must be non-negative")
    A = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    B = np.array([[0.0], [0.0], [1.0]])
    if c_mode == "identity":
        C = np.eye(3)
    elif c_mode == "random":
        C = rng_for(seed, "c_matrix").standard_normal((3, 3))
    else:
        raise ValueError(f"c_mode must be 'identity' or 'random', got {c_mode!r}")
    return LinearGaussianModel(A, B, C, q_std ** 2 * np.eye(3), r_std ** 2 * np.eye(3))


def control_schedule(u0: float, decay: float, horizon: int) -> np.ndarray:
    """Exponentially decaying scalar control ``u0 * exp(-decay * t)``, shape ``(horizon, 1)``."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if decay < 0:
        raise ValueError("decay must be non-negative")
    t = np.arange(horizon, dtype=float)
    return (u0 * np.exp(-decay * t))[:, None]


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write ``t, x_*, u_*, y_*`` rows for ``t = 0..T``.

    Row ``t`` carries the state ``x[t]``, the control applied at ``t``
    (empty on the last row) and the observation of ``x[t]`` (empty on
    row 0).
    """
    n = traj.states.shape[1]
    k = traj.controls.shape[1]
    m = traj.observations.shape[1]
    header = ["t"] + [f"x_{i}" for i in range(n)] + [f"u_{i}" for i in range(k)] + [f"y_{i}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(traj.horizon + 1):
            row = [str(t)] + [format_float(v) for v in traj.states[t]]
            row += [format_float(v) for v in traj.controls[t]] if t < traj.horizon else [""] * k
            row += [format_float(v) for v in traj.observations[t - 1]] if t > 0 else [""] * m
            w.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    """Inverse of :func:`write_trajectory_csv`."""
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: missing header row")
    header = rows[0]
    xi = [i for i, h in enumerate(header) if h.startswith("x_")]
    ui = [i for i, h in enumerate(header) if h.startswith("u_")]
    yi = [i for i, h in enumerate(header) if h.startswith("y_")]
    body = rows[1:]
    if len(body) < 2:
        raise ValueError(f"{path}: trajectory needs at least one transition")
    states = np.array([[float(r[i]) for i in xi] for r in body])
    controls = np.array([[float(r[i]) for i in ui] for r in body[:-1]])
    obs = np.array([[float(r[i]) for i in yi] for r in body[1:]])
    for t, r in enumerate(body):
        if int(r[0]) != t:
            raise ValueError(f"{path}: row {t + 1} has t={r[0]}")
    return Trajectory(states, controls, obs)

