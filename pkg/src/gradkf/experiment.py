"""Tracking and online-learning experiments on the accelerating-body task.

Every run simulates one trajectory and feeds the identical observation
sequence to the exact Kalman filter and to one or more gradient filters.
Results are plain arrays plus a flat metric dictionary; the writers at the
bottom turn them into CSV, matrix-dump and ``key = value`` text files.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .analytic import BeliefState, filter_trajectory
from .gradient import DivergenceError, GradientFilterState, InferenceConfig, run_filter
from .model import (
    LinearGaussianModel,
    Trajectory,
    control_schedule,
    format_float,
    kinematic_model,
    rng_for,
    simulate,
)

__all__ = [
    "SCENARIOS",
    "ExperimentConfig",
    "ExperimentResult",
    "ExperimentDivergence",
    "build_model",
    "simulate_trajectory",
    "run_experiment",
    "run_tracking",
    "run_learning",
    "run_c_failure",
    "rmse",
    "window_slices",
    "increment_autocorrelation",
    "summarize",
    "write_results_csv",
    "write_matrix_dump",
    "write_metrics",
    "write_outputs",
]

SCENARIOS = {
    "none": "",
    "learn_A": "A",
    "learn_B": "B",
    "learn_AB": "AB",
    "learn_C": "C",
}


class ExperimentDivergence(DivergenceError):
    """A filter diverged during an experiment; carries the offending config."""

    def __init__(self, message, config, step=None, timestep=None):
        self.config = config
        super().__init__(message, step=step, timestep=timestep)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines one run; flat so it maps onto ``key = value`` text.

    ``randomize`` lists the matrices drawn standard-normal before the run
    (defaults to the learned ones).  ``precision`` selects how the
    gradient filter weights the dynamical error: ``"fixed"`` uses the
    inverse process covariance, ``"projected"`` the inverse projected
    covariance, and ``"auto"`` picks projected for pure tracking and fixed
    for learning runs.
    """

    horizon: int = 2000
    dt: float = 0.001
    q_std: float = 1.0
    r_std: float = 1.0
    c_mode: str = "random"
    u0: float = 1.0
    decay: float = 0.05
    n_steps: int = 5
    eta_mu: object = "auto"
    lr: float = 1e-5
    init: str = "prediction"
    interleave: bool = False
    precision: str = "auto"
    scenario: str = "none"
    randomize: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {sorted(SCENARIOS)}, got {self.scenario!r}")
        if self.precision not in ("auto", "fixed", "projected"):
            raise ValueError("precision must be 'auto', 'fixed' or 'projected'")
        rand = SCENARIOS[self.scenario] if self.randomize is None else self.randomize.upper()
        rand = "".join(sorted(set(rand)))
        if set(rand) - set("ABC"):
            raise ValueError(f"randomize may only name A, B and C, got {self.randomize!r}")
        if not set(SCENARIOS[self.scenario]) <= set(rand):
            raise ValueError(f"scenario {self.scenario} learns a matrix that is not randomized ({rand or 'none'})")
        object.__setattr__(self, "randomize", rand)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.q_std < 0 or self.r_std < 0:
            raise ValueError("noise standard deviations must be non-negative")
        self.inference_config()  # validates the inference fields

    @property
    def learned(self) -> str:
        return SCENARIOS[self.scenario]

    @property
    def resolved_precision(self) -> str:
        if self.precision != "auto":
            return self.precision
        return "projected" if self.scenario == "none" else "fixed"

    def inference_config(self, learn: bool = True, record_trace: bool = False) -> InferenceConfig:
        return InferenceConfig(
            n_steps=self.n_steps, eta_mu=self.eta_mu, lr_A=self.lr, lr_B=self.lr, lr_C=self.lr,
            learn=tuple(self.learned) if learn else (), init=self.init,
            interleave=self.interleave, record_trace=record_trace,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        changes.setdefault("randomize", None if "scenario" in changes else self.randomize)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def tag(self) -> str:
        return f"{self.scenario}_seed{self.seed}_n{self.n_steps}"


@dataclass
class ExperimentResult:
    """Per-timestep traces for ``t = 1..T`` plus metrics.

    ``states`` are the true states the observations measure.  ``baselines``
    maps a name (``"frozen"``, ``"true_model"``) to a dict holding ``mu``
    and ``loss`` traces computed on the same data.
    """

    config: ExperimentConfig
    states: np.ndarray
    observations: np.ndarray
    mu_kf: np.ndarray
    mu_gkf: np.ndarray
    loss: np.ndarray
    observation_digest: str
    matrices: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    baselines: Dict[str, dict] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)
    loss_traces: Optional[list] = None

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def build_model(cfg: ExperimentConfig) -> LinearGaussianModel:
    return kinematic_model(dt=cfg.dt, q_std=cfg.q_std, r_std=cfg.r_std, c_mode=cfg.c_mode, seed=cfg.seed)


def simulate_trajectory(cfg: ExperimentConfig, model: Optional[LinearGaussianModel] = None) -> Trajectory:
    model = build_model(cfg) if model is None else model
    return simulate(model, np.zeros(model.n_state), control_schedule(cfg.u0, cfg.decay, cfg.horizon), cfg.seed)


def rmse(estimate, reference, axis=0) -> np.ndarray:
    """Root-mean-square difference along ``axis`` (per state dimension by default)."""
    d = np.asarray(estimate, dtype=float) - np.asarray(reference, dtype=float)
    return np.sqrt(np.mean(d * d, axis=axis))


def window_slices(horizon: int, fraction: float = 0.1):
    """First and last ``fraction`` of the timesteps (at least one each)."""
    w = max(1, int(round(fraction * horizon)))
    return slice(0, w), slice(horizon - w, horizon)


def increment_autocorrelation(trace) -> float:
    """Lag-1 autocorrelation of successive estimate increments, averaged over dimensions.

    Reported as a smoothness measure only.
    """
    d = np.diff(np.asarray(trace, dtype=float), axis=0)
    if d.shape[0] < 3:
        return 0.0
    d = d - d.mean(axis=0)
    num = np.sum(d[1:] * d[:-1], axis=0)
    den = np.sum(d * d, axis=0)
    vals = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(np.mean(vals))


def _random_matrices(cfg: ExperimentConfig, model: LinearGaussianModel) -> dict:
    out = {}
    shapes = {"A": model.A.shape, "B": model.B.shape, "C": model.C.shape}
    for name in cfg.randomize:
        out[f"{name}_hat"] = rng_for(cfg.seed, f"init_{name}").standard_normal(shapes[name])
    return out


def _kalman_means(model: LinearGaussianModel, traj: Trajectory) -> np.ndarray:
    n = model.n_state
    posts = filter_trajectory(model, BeliefState(traj.states[0], np.zeros((n, n))), traj)
    return np.array([b.mean for b in posts])


def _gradient_run(cfg, model, traj, weights, learn, record_trace=False):
    state = GradientFilterState.from_model(model, mu0=traj.states[0], precision=cfg.resolved_precision, **weights)
    initial = state.snapshot()
    icfg = cfg.inference_config(learn=learn, record_trace=record_trace)
    traces = [] if record_trace else None

    def keep(t, diag):
        traces.append(diag.loss_trace)

    means, losses = run_filter(state, traj.controls, traj.observations, icfg,
                               callback=keep if record_trace else None)
    return means, losses, initial, state.snapshot(), traces


def _tracking_metrics(truth, mu_kf, mu_gkf, loss) -> dict:
    m = {}
    T = truth.shape[0]
    first, last = window_slices(T)
    for name, est, ref in (("gradient_vs_truth", mu_gkf, truth),
                           ("analytic_vs_truth", mu_kf, truth),
                           ("gradient_vs_analytic", mu_gkf, mu_kf)):
        per_dim = rmse(est, ref)
        for i, v in enumerate(per_dim):
            m[f"rmse_{name}_{i}"] = float(v)
        m[f"rmse_{name}"] = float(rmse(est.ravel(), ref.ravel()))
    m["max_abs_gradient_vs_analytic"] = float(np.max(np.abs(mu_gkf - mu_kf)))
    m["loss_initial_window_mean"] = float(np.mean(loss[first]))
    m["loss_final_window_mean"] = float(np.mean(loss[last]))
    m["increment_autocorr_gradient"] = increment_autocorrelation(mu_gkf)
    m["increment_autocorr_analytic"] = increment_autocorrelation(mu_kf)
    return m


def _wrap(exc: DivergenceError, cfg, what):
    return ExperimentDivergence(f"{what} diverged at timestep {exc.timestep}: {exc}", cfg,
                                step=exc.step, timestep=exc.timestep)


def run_tracking(cfg: ExperimentConfig, traj: Optional[Trajectory] = None,
                 record_trace: bool = False) -> ExperimentResult:
    """Exact and gradient filters, both with the true matrices, on one trajectory.

    Raises
    ------
    ExperimentDivergence
        If the gradient filter iterate becomes non-finite.
    """
    if cfg.scenario != "none":
        raise ValueError("run_tracking needs scenario 'none'")
    model = build_model(cfg)
    traj = simulate_trajectory(cfg, model) if traj is None else traj
    mu_kf = _kalman_means(model, traj)
    try:
        means, losses, initial, final, traces = _gradient_run(cfg, model, traj, {}, False, record_trace)
    except DivergenceError as exc:
        raise _wrap(exc, cfg, "gradient filter") from exc
    truth = traj.states[1:]
    return ExperimentResult(
        config=cfg, states=truth, observations=traj.observations, mu_kf=mu_kf, mu_gkf=means,
        loss=losses, observation_digest=traj.observation_digest(),
        matrices={"initial": initial, "final": final},
        metrics=_tracking_metrics(truth, mu_kf, means, losses), loss_traces=traces,
    )


def run_learning(cfg: ExperimentConfig, traj: Optional[Trajectory] = None) -> ExperimentResult:
    """Online learning from random matrices, with two baselines on the same data.

    The baselines are the same random matrices with learning switched off
    (``"frozen"``) and the true matrices (``"true_model"``).  A frozen
    baseline that diverges is kept as a result: its traces stop being
    finite and ``frozen_diverged_at`` records the timestep.

    Raises
    ------
    ExperimentDivergence
        If the learning run diverges, typically because ``lr`` is too large.
    """
    if cfg.scenario == "none":
        raise ValueError("run_learning needs a learning scenario")
    model = build_model(cfg)
    traj = simulate_trajectory(cfg, model) if traj is None else traj
    weights = _random_matrices(cfg, model)
    mu_kf = _kalman_means(model, traj)
    truth = traj.states[1:]
    T = truth.shape[0]
    try:
        means, losses, initial, final, _ = _gradient_run(cfg, model, traj, weights, True)
    except DivergenceError as exc:
        raise _wrap(exc, cfg, f"learning run (lr={cfg.lr:g}); try a smaller --lr") from exc
    metrics = _tracking_metrics(truth, mu_kf, means, losses)
    baselines = {}
    for name, w in (("frozen", weights), ("true_model", {})):
        try:
            b_mu, b_loss, *_ = _gradient_run(cfg, model, traj, w, False)
            metrics[f"{name}_diverged_at"] = 0
        except DivergenceError as exc:
            b_mu = np.full((T, model.n_state), np.inf)
            b_loss = np.full(T, np.inf)
            metrics[f"{name}_diverged_at"] = int(exc.timestep or 0)
        baselines[name] = {"mu": b_mu, "loss": b_loss}
    _, last = window_slices(T)
    metrics["rmse_learned_final_window"] = float(rmse(means[last].ravel(), truth[last].ravel()))
    for name, b in baselines.items():
        with np.errstate(over="ignore", invalid="ignore"):
            metrics[f"rmse_{name}_final_window"] = float(rmse(b["mu"][last].ravel(), truth[last].ravel()))
    metrics["rmse_analytic_final_window"] = float(rmse(mu_kf[last].ravel(), truth[last].ravel()))
    return ExperimentResult(
        config=cfg, states=truth, observations=traj.observations, mu_kf=mu_kf, mu_gkf=means,
        loss=losses, observation_digest=traj.observation_digest(),
        matrices={"initial": initial, "final": final}, baselines=baselines, metrics=metrics,
    )


def run_c_failure(cfg: ExperimentConfig, traj: Optional[Trajectory] = None) -> ExperimentResult:
    """Learn the observation matrix from a random start.

    The loss falls while the state estimate drifts away from the truth,
    because the learned ``C_hat`` and the estimate can trade scale
    freely.  ``rmse_ratio_vs_analytic`` compares the tracking error with
    that of the exact filter on the same data.
    """
    if cfg.scenario != "learn_C":
        raise ValueError("run_c_failure needs scenario 'learn_C'")
    res = run_learning(cfg, traj)
    m = res.metrics
    m["rmse_ratio_vs_analytic"] = m["rmse_gradient_vs_truth"] / m["rmse_analytic_vs_truth"]
    m["loss_window_ratio"] = m["loss_final_window_mean"] / m["loss_initial_window_mean"]
    return res


def run_experiment(cfg: ExperimentConfig, traj: Optional[Trajectory] = None) -> ExperimentResult:
    if cfg.scenario == "none":
        return run_tracking(cfg, traj)
    if cfg.scenario == "learn_C":
        return run_c_failure(cfg, traj)
    return run_learning(cfg, traj)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_float(v)


def summarize(result: ExperimentResult) -> str:
    """Metric block as ``key = value`` lines in a fixed order (pure function of the result)."""
    lines = [f"scenario = {result.config.scenario}",
             f"seed = {result.config.seed}",
             f"n_steps = {result.config.n_steps}",
             f"horizon = {result.horizon}",
             f"observation_sha256 = {result.observation_digest}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in sorted(result.metrics.items())]
    return "\n".join(lines) + "\n"


def _write_lines(path: Path, lines):
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_results_csv(result: ExperimentResult, path, mu=None, loss=None) -> None:
    """Columns ``t, x_true_*, y_*, mu_kf_*, mu_gkf_*, loss`` for ``t = 1..T``."""
    mu = result.mu_gkf if mu is None else mu
    loss = result.loss if loss is None else loss
    n = result.states.shape[1]
    m = result.observations.shape[1]
    header = (["t"] + [f"x_true_{i}" for i in range(n)] + [f"y_{i}" for i in range(m)]
              + [f"mu_kf_{i}" for i in range(n)] + [f"mu_gkf_{i}" for i in range(n)] + ["loss"])
    lines = [",".join(header)]
    for t in range(result.horizon):
        vals = np.concatenate([result.states[t], result.observations[t], result.mu_kf[t], mu[t], [loss[t]]])
        lines.append(",".join([str(t + 1)] + [format_float(v) for v in vals]))
    _write_lines(Path(path), lines)


def write_matrix_dump(result: ExperimentResult, path) -> None:
    """Blocks of ``name rows cols`` followed by one line per row."""
    lines = []
    for phase in ("initial", "final"):
        for name, mat in result.matrices.get(phase, {}).items():
            lines.append(f"{name}_{phase} {mat.shape[0]} {mat.shape[1]}")
            lines += [" ".join(format_float(v) for v in row) for row in mat]
    _write_lines(Path(path), lines)


def read_matrix_dump(path) -> Dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    out, i = {}, 0
    while i < len(lines):
        name, r, c = lines[i].split()
        r, c = int(r), int(c)
        out[name] = np.array([[float(v) for v in lines[i + 1 + j].split()] for j in range(r)]).reshape(r, c)
        i += 1 + r
    return out


def write_metrics(result: ExperimentResult, path) -> None:
    Path(path).write_text(summarize(result), newline="\n")


def write_outputs(result: ExperimentResult, out_dir) -> list:
    """Write every file for one run into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    tag = result.config.tag
    paths = [out / f"results_{tag}.csv", out / f"metrics_{tag}.txt"]
    write_results_csv(result, paths[0])
    write_metrics(result, paths[1])
    for name, b in result.baselines.items():
        p = out / f"results_{tag}_{name}.csv"
        with np.errstate(invalid="ignore"):
            write_results_csv(result, p, mu=b["mu"], loss=b["loss"])
        paths.append(p)
    if result.config.scenario != "none":
        p = out / f"matrices_{tag}.txt"
        write_matrix_dump(result, p)
        paths.append(p)
    return paths
