"""Predictor training against a frozen backbone.

Only the skip predictors are trainable. Each training step rolls a batch
through a short window of consecutive plan steps with the soft-blend
forward, so caches are populated the same way they are at inference, and
minimizes a distillation (or noise-regression) term plus the laziness
penalty. Gradients come from central finite differences over the 2*L*D
predictor parameters; an analytic gradient of the penalty term
cross-checks the FD machinery.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .backbone import KINDS, ModelWeights, model_forward
from .lazy import (
    BlendedEvaluator,
    GatedEvaluator,
    PredictorBank,
    RunStats,
    lazy_ratio,
)
from .linalg import make_rng, sigmoid
from .scheduler import NoiseSchedule, SamplerPlan, ddim_step, sample_loop

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "AdamWState",
    "TrainResult",
    "lazy_loss",
    "lazy_loss_from_records",
    "lazy_objective",
    "analytic_lazy_grad",
    "fd_gradient",
    "adamw_step",
    "evaluate_loss",
    "train_loop",
    "evaluate_inference",
    "penalty_sweep",
    "find_rho_for_ratio",
    "weights_fingerprint",
]

LOSS_MODES = ("self-distill", "eps-mse")


@dataclass(frozen=True)
class TrainConfig:
    rho_attn: float = 1e-3
    rho_feed: float = 1e-3
    learning_rate: float = 1e-4
    steps: int = 500
    batch: int = 4
    loss_mode: str = "self-distill"
    fd_epsilon: float = 1e-5
    window: int = 4  # consecutive plan steps per batch
    null_prob: float = 0.1
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.rho_attn <= 1.0 and 0.0 <= self.rho_feed <= 1.0):
            raise ValueError("penalty ratios must lie in [0, 1]")
        if self.fd_epsilon <= 0.0:
            raise ValueError("fd_epsilon must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.steps < 0 or self.batch < 1 or self.window < 1:
            raise ValueError("steps, batch, and window must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    lazy: float
    distill: float


def lazy_loss(scores_attn, scores_feed, rho_attn: float, rho_feed: float, batch: int) -> float:
    """Penalty for one step: sum over kinds of rho * (1/B) * sum(1 - s)."""
    a = float(np.sum(1.0 - np.asarray(scores_attn, dtype=np.float64))) if np.size(scores_attn) else 0.0
    f = float(np.sum(1.0 - np.asarray(scores_feed, dtype=np.float64))) if np.size(scores_feed) else 0.0
    return rho_attn * a / batch + rho_feed * f / batch


def lazy_loss_from_records(records, rho_attn: float, rho_feed: float, batch: int) -> float:
    """Penalty summed over every scored (blended) module evaluation."""
    rho = {"attn": rho_attn, "feed": rho_feed}
    return sum(rho[r.kind] * (1.0 - r.score) for r in records) / batch


def lazy_objective(records, bank: PredictorBank, rho_attn: float, rho_feed: float, batch: int) -> float:
    """Penalty as a function of the bank, with the recorded inputs held fixed.

    This is the frozen-trajectory objective the analytic gradient below
    differentiates exactly; scores are recomputed from the recorded
    per-module column sums and the current predictor weights.
    """
    rho = {"attn": rho_attn, "feed": rho_feed}
    total = 0.0
    for r in records:
        s = float(sigmoid((r.column_sums @ bank.weights[(r.layer, r.kind)]).item()))
        total += rho[r.kind] * (1.0 - s)
    return total / batch


def analytic_lazy_grad(records, bank: PredictorBank, rho_attn: float, rho_feed: float,
                       batch: int) -> dict:
    """Exact gradient of ``lazy_objective`` with respect to every predictor.

    d(1-s)/dW = -s(1-s) * (Z^T 1_N), chained through the scalar sigmoid.
    """
    rho = {"attn": rho_attn, "feed": rho_feed}
    grads = {key: np.zeros_like(w) for key, w in bank.weights.items()}
    for r in records:
        key = (r.layer, r.kind)
        s = float(sigmoid((r.column_sums @ bank.weights[key]).item()))
        grads[key] -= (rho[r.kind] / batch) * s * (1.0 - s) * r.column_sums[:, None]
    return grads


def fd_gradient(loss_fn, bank: PredictorBank, fd_epsilon: float) -> dict:
    """Central differences over every predictor coordinate.

    ``loss_fn(bank)`` must be deterministic: both evaluations of a
    coordinate see identical randomness. The bank is restored exactly.
    """
    if fd_epsilon <= 0.0:
        raise ValueError("fd_epsilon must be positive")
    grads = {}
    for key in bank.keys():
        w = bank.weights[key]
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + fd_epsilon
            up = loss_fn(bank)
            w[idx] = orig - fd_epsilon
            down = loss_fn(bank)
            w[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while differencing predictor {key}{idx}")
            g[idx] = (up - down) / (2.0 * fd_epsilon)
        grads[key] = g
    return grads


@dataclass
class AdamWState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0
    weight_decay: float = 0.0

    @classmethod
    def for_bank(cls, bank: PredictorBank, weight_decay: float = 0.0) -> "AdamWState":
        return cls(
            first={k: np.zeros_like(w) for k, w in bank.weights.items()},
            second={k: np.zeros_like(w) for k, w in bank.weights.items()},
            weight_decay=weight_decay,
        )


def adamw_step(bank: PredictorBank, grads: dict, state: AdamWState, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8) -> PredictorBank:
    """Standard AdamW with bias correction and decoupled weight decay; updates in place."""
    state.step += 1
    b1, b2 = betas
    for key in bank.keys():
        g = grads[key]
        state.first[key] = b1 * state.first[key] + (1.0 - b1) * g
        state.second[key] = b2 * state.second[key] + (1.0 - b2) * g * g
        m_hat = state.first[key] / (1.0 - b1 ** state.step)
        v_hat = state.second[key] / (1.0 - b2 ** state.step)
        bank.weights[key] -= lr * (m_hat / (np.sqrt(v_hat) + eps) + state.weight_decay * bank.weights[key])
    return bank


def evaluate_loss(model: ModelWeights, sched: NoiseSchedule, plan: SamplerPlan,
                  tokens, labels, bank: PredictorBank, config: TrainConfig,
                  step_seed: int, sample_keys=None) -> LossBreakdown:
    """One batch objective over a random window of consecutive plan steps.

    Deterministic given (config.seed, step_seed): window position, label
    dropout, and noise all come from that substream, so repeated calls
    (as in finite differencing) see identical randomness. Per-sample
    draws are keyed by ``sample_keys`` (dataset indices by convention),
    so the mean reduction makes the loss invariant to sample order.

    self-distill: latents evolve through the window via the blended
    prediction and the term is the per-entry MSE against the dense model
    on the same latents. eps-mse: latents are built directly as
    a_t * x0 + s_t * eps with one shared noise draw, and the term is the
    per-entry MSE against that noise.
    """
    rng = make_rng(config.seed, 0x1055, step_seed)
    window = min(config.window, plan.num_steps)
    start = int(rng.integers(0, plan.num_steps - window + 1))
    if sample_keys is None:
        sample_keys = list(range(len(tokens)))
    use_labels = []
    noise = []
    for key, x, lab in zip(sample_keys, tokens, labels):
        sub = make_rng(config.seed, 0x1056, step_seed, int(key))
        use_labels.append(None if sub.random() < config.null_prob else int(lab))
        noise.append(sub.standard_normal(np.shape(x)))

    evaluator = BlendedEvaluator(model, bank)
    t_start = plan.steps[start]
    z = [sched.alpha[t_start] * np.asarray(x, dtype=np.float64) + sched.sigma[t_start] * e
         for x, e in zip(tokens, noise)]
    distill_sum = 0.0
    evals = 0
    for offset in range(window):
        pos = start + offset
        t, t_prev = plan.steps[pos], plan.steps[pos + 1]
        if config.loss_mode == "eps-mse":
            z = [sched.alpha[t] * np.asarray(x, dtype=np.float64) + sched.sigma[t] * e
                 for x, e in zip(tokens, noise)]
        evaluator.begin_step(pos, t)
        eps_blend = []
        for j in range(len(z)):
            evaluator.begin_forward(j)
            pred = model_forward(model, z[j], t, use_labels[j], evaluator)
            if config.loss_mode == "self-distill":
                target = model_forward(model, z[j], t, use_labels[j])
            else:
                target = noise[j]
            diff = pred - target
            distill_sum += float(np.mean(diff * diff))
            evals += 1
            eps_blend.append(pred)
        if config.loss_mode == "self-distill":
            z = [ddim_step(z[j], eps_blend[j], t, t_prev, sched) for j in range(len(z))]
    distill = distill_sum / evals
    lazy = lazy_loss_from_records(evaluator.records, config.rho_attn, config.rho_feed, len(tokens))
    return LossBreakdown(total=distill + lazy, lazy=lazy, distill=distill)


def weights_fingerprint(model: ModelWeights) -> str:
    """SHA-256 over every weight array, for frozen-backbone assertions."""
    h = hashlib.sha256()
    for name, arr in model.weight_matrices():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    bank: PredictorBank
    trace: list  # dicts: step, total_loss, lazy_loss, distill_loss


def train_loop(model: ModelWeights, sched: NoiseSchedule, plan: SamplerPlan,
               dataset, config: TrainConfig) -> TrainResult:
    """AdamW descent of the predictors; the backbone must come out untouched."""
    before = weights_fingerprint(model)
    bank = PredictorBank.zeros(model.config.num_layers, model.config.hidden_dim)
    state = AdamWState.for_bank(bank)
    trace = []
    size = len(dataset.tokens)
    for step in range(config.steps):
        pick = [int(i) for i in make_rng(config.seed, 0xBA7C4, step).integers(0, size, size=config.batch)]
        tokens = [dataset.tokens[i] for i in pick]
        labels = [int(dataset.labels[i]) for i in pick]

        def loss_fn(b, _step=step, _tokens=tokens, _labels=labels, _keys=pick):
            return evaluate_loss(model, sched, plan, _tokens, _labels, b, config, _step,
                                 sample_keys=_keys).total

        parts = evaluate_loss(model, sched, plan, tokens, labels, bank, config, step,
                              sample_keys=pick)
        grads = fd_gradient(loss_fn, bank, config.fd_epsilon)
        adamw_step(bank, grads, state, config.learning_rate)
        trace.append({
            "step": step,
            "total_loss": parts.total,
            "lazy_loss": parts.lazy,
            "distill_loss": parts.distill,
        })
    if weights_fingerprint(model) != before:
        raise RuntimeError("backbone weights changed during predictor training")
    return TrainResult(bank=bank, trace=trace)


def evaluate_inference(model: ModelWeights, bank: PredictorBank, sched: NoiseSchedule,
                       plan: SamplerPlan, batch: int, seed: int,
                       threshold: float = 0.5):
    """Sample with hard skipping and report (stats, per-kind mean ratio, drift vs dense).

    Drift is the mean Frobenius distance between the lazy and dense final
    latents over the evaluation batch.
    """
    rng = make_rng(seed, 0xE7A1)
    shape = (model.config.num_patches, model.config.hidden_dim)
    z_init = [rng.standard_normal(shape) for _ in range(batch)]
    labels = [int(c) for c in rng.integers(0, model.config.num_classes, size=batch)]
    stats = RunStats(model.config.num_layers, plan.num_steps, 2 * batch)
    lazy_eval = GatedEvaluator(model, bank, stats=stats, threshold=threshold)
    z_lazy = sample_loop(model, z_init, plan, sched, labels, lazy_eval)
    z_dense = sample_loop(model, z_init, plan, sched, labels)
    drift = float(np.mean([np.linalg.norm(a - b) for a, b in zip(z_lazy, z_dense)]))
    ratios = {kind: float(lazy_ratio(stats, kind).mean()) for kind in KINDS}
    return stats, ratios, drift


def penalty_sweep(model: ModelWeights, sched: NoiseSchedule, plan: SamplerPlan,
                  dataset, config: TrainConfig, rhos, eval_batch: int = 4) -> list:
    """Train once per penalty ratio (same seed) and tabulate the resulting laziness."""
    if len(rhos) < 1:
        raise ValueError("need at least one penalty ratio")
    rows = []
    for rho in sorted(float(r) for r in rhos):
        cfg = replace(config, rho_attn=rho, rho_feed=rho)
        result = train_loop(model, sched, plan, dataset, cfg)
        _, ratios, drift = evaluate_inference(model, result.bank, sched, plan,
                                              eval_batch, config.seed, config.threshold)
        rows.append({
            "rho": rho,
            "gamma_attn": ratios["attn"],
            "gamma_feed": ratios["feed"],
            "consistency_error": drift,
        })
    return rows


def find_rho_for_ratio(target: float, model: ModelWeights, sched: NoiseSchedule,
                       plan: SamplerPlan, dataset, config: TrainConfig,
                       lo: float = 1e-7, hi: float = 1e-2, iters: int = 8,
                       eval_batch: int = 4):
    """Geometric bisection for a penalty ratio hitting a target mean laziness.

    Best-effort utility: the rho -> laziness map is only empirically
    monotone, so this returns the closest ratio probed, not a guarantee.
    """

    def gamma_at(rho):
        cfg = replace(config, rho_attn=rho, rho_feed=rho)
        result = train_loop(model, sched, plan, dataset, cfg)
        _, ratios, _ = evaluate_inference(model, result.bank, sched, plan,
                                          eval_batch, config.seed, config.threshold)
        return 0.5 * (ratios["attn"] + ratios["feed"])

    best = (float("inf"), lo)
    for _ in range(iters):
        mid = float(np.sqrt(lo * hi))
        g = gamma_at(mid)
        if abs(g - target) < best[0]:
            best = (abs(g - target), mid)
        if g < target:
            lo = mid
        else:
            hi = mid
    return best[1]
