"""Variance-preserving noise schedule, DDIM update, and guidance combine.

The sampler walks a strictly decreasing timestep plan, querying the model
for conditional and null-token noise predictions at every step and
combining them with classifier-free guidance. Module evaluation inside
the model is delegated to an evaluator object so the caching runtime can
plug in; with the dense evaluator this is plain DDIM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ModelWeights, dense_compute, model_forward
from .linalg import ShapeMismatchError

__all__ = [
    "NoiseSchedule",
    "SamplerPlan",
    "build_schedule",
    "uniform_plan",
    "ddim_step",
    "cfg_combine",
    "DenseEvaluator",
    "sample_loop",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays of signal strength alpha_t and noise strength sigma_t, t = 0..T."""

    train_steps: int
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if len(self.alpha) != self.train_steps + 1 or len(self.sigma) != self.train_steps + 1:
            raise ValueError("schedule arrays must have train_steps + 1 entries")


def build_schedule(train_steps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear-beta variance-preserving schedule.

    alpha_t = sqrt(prod_{s<=t}(1 - beta_s)), sigma_t = sqrt(1 - alpha_t^2),
    with the boundary convention (alpha_0, sigma_0) = (1, 0).
    """
    if train_steps < 1:
        raise ValueError(f"train_steps must be >= 1, got {train_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, train_steps)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(train_steps, np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar))


@dataclass(frozen=True)
class SamplerPlan:
    """Strictly decreasing timestep subsequence ending at 0, plus guidance scale."""

    steps: tuple
    guidance: float = 1.5

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) < 2:
            raise ValueError("plan needs at least two timesteps (start and 0)")
        if steps[-1] != 0:
            raise ValueError(f"plan must end at timestep 0, got {steps[-1]}")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ValueError(f"plan timesteps must be strictly decreasing: {steps}")
        if self.guidance < 1.0:
            raise ValueError(f"guidance scale must be >= 1, got {self.guidance}")

    @property
    def num_steps(self) -> int:
        """Number of model-evaluation steps (transitions in the plan)."""
        return len(self.steps) - 1


def uniform_plan(train_steps: int, num_steps: int, guidance: float = 1.5) -> SamplerPlan:
    """Evenly spaced plan from the top of the schedule down to 0."""
    if not 1 <= num_steps <= train_steps:
        raise ValueError(f"num_steps must be in [1, {train_steps}], got {num_steps}")
    ts = np.linspace(0.0, float(train_steps), num_steps + 1)
    steps = tuple(int(round(t)) for t in ts[::-1])
    if len(set(steps)) != len(steps):
        raise ValueError(f"uniform plan with {num_steps} steps collides at train_steps={train_steps}")
    return SamplerPlan(steps=steps, guidance=guidance)


def ddim_step(z_t: np.ndarray, eps: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic update z_{t'} = a_{t'} (z_t - s_t eps)/a_t + s_{t'} eps."""
    if t_prev > t:
        raise ValueError(f"t_prev={t_prev} must not exceed t={t}")
    if not 0 <= t_prev <= t <= sched.train_steps:
        raise ValueError(f"timesteps outside schedule: t={t}, t_prev={t_prev}")
    z_t = np.asarray(z_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z_t.shape != eps.shape:
        raise ShapeMismatchError(f"latent {z_t.shape} and noise {eps.shape} shapes differ")
    if t_prev == t:
        # Algebraic identity; the float expression below would drift by rounding.
        return z_t.copy()
    alpha_t = sched.alpha[t]
    if alpha_t == 0.0:
        raise ZeroDivisionError(f"alpha at t={t} is zero")
    return sched.alpha[t_prev] * (z_t - sched.sigma[t] * eps) / alpha_t + sched.sigma[t_prev] * eps


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, guidance: float) -> np.ndarray:
    """Classifier-free guidance: w * eps_cond - (w - 1) * eps_uncond.

    Evaluated as uncond + w * (cond - uncond) so equal predictions return
    exactly, for any guidance scale.
    """
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeMismatchError(f"guidance operands differ: {eps_cond.shape} vs {eps_uncond.shape}")
    if guidance < 1.0:
        raise ValueError(f"guidance scale must be >= 1, got {guidance}")
    if guidance == 1.0:
        return eps_cond.copy()
    return eps_uncond + guidance * (eps_cond - eps_uncond)


class DenseEvaluator:
    """Always-compute module evaluator; the baseline the caching runtime must match."""

    def __init__(self, model: ModelWeights):
        self._compute = dense_compute(model)

    def begin_step(self, position: int, timestep: int):
        pass

    def begin_forward(self, trajectory: int):
        pass

    def __call__(self, layer: int, kind: str, z: np.ndarray) -> np.ndarray:
        return self._compute(layer, kind, z)


def sample_loop(model: ModelWeights, z_init, plan: SamplerPlan, sched: NoiseSchedule,
                labels, evaluator=None):
    """Run the full DDIM descent for a batch of latents.

    ``z_init`` is a sequence of (N, D) arrays, ``labels`` the matching class
    indices. Each sample keeps two evaluation trajectories per step: the
    conditional forward (trajectory 2j) and the null-token forward
    (trajectory 2j+1). Returns the list of final latents.
    """
    if evaluator is None:
        evaluator = DenseEvaluator(model)
    z = [np.array(zi, dtype=np.float64) for zi in z_init]
    labels = list(labels)
    if len(labels) != len(z):
        raise ValueError(f"{len(z)} latents but {len(labels)} labels")
    steps = plan.steps
    for position in range(plan.num_steps):
        t, t_prev = steps[position], steps[position + 1]
        evaluator.begin_step(position, t)
        for j in range(len(z)):
            evaluator.begin_forward(2 * j)
            eps_cond = model_forward(model, z[j], t, labels[j], evaluator)
            evaluator.begin_forward(2 * j + 1)
            eps_uncond = model_forward(model, z[j], t, None, evaluator)
            eps_hat = cfg_combine(eps_cond, eps_uncond, plan.guidance)
            z[j] = ddim_step(z[j], eps_hat, t, t_prev, sched)
    return z
