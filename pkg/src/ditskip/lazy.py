"""Learned cross-step module skipping.

Each (layer, module-kind) pair carries a linear predictor that maps the
module's modulated input to a reuse score s = sigmoid(sum(Z @ W)). At
inference a score above the threshold skips the module and substitutes
the output cached at the previous sampling step; at training the fresh
and cached outputs are blended with weights (1-s, s) so the predictors
receive gradient. Residuals, modulation, and gates are untouched either
way; only the module evaluation itself is intercepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import KINDS, ModelWeights, dense_compute
from .linalg import cosine_similarity, sigmoid

__all__ = [
    "PredictorBank",
    "StepCache",
    "RunStats",
    "ModuleRecord",
    "lazy_score",
    "blended_forward",
    "gated_forward",
    "lazy_ratio",
    "mac_tally",
    "skip_rate_table",
    "write_heatmap_csv",
    "GatedEvaluator",
    "BlendedEvaluator",
    "RecordingEvaluator",
]


@dataclass
class PredictorBank:
    """One (D, 1) weight column per (layer, kind); no bias."""

    num_layers: int
    hidden_dim: int
    weights: dict = field(default_factory=dict)  # (layer, kind) -> (D, 1) array

    @classmethod
    def zeros(cls, num_layers: int, hidden_dim: int) -> "PredictorBank":
        """All-zero predictors: score 0.5 everywhere, on the compute side of the threshold."""
        weights = {(l, k): np.zeros((hidden_dim, 1)) for l in range(num_layers) for k in KINDS}
        return cls(num_layers, hidden_dim, weights)

    def keys(self):
        return [(l, k) for l in range(self.num_layers) for k in KINDS]

    def copy(self) -> "PredictorBank":
        return PredictorBank(self.num_layers, self.hidden_dim,
                             {k: v.copy() for k, v in self.weights.items()})

    def validate(self):
        expect = {(l, k) for l in range(self.num_layers) for k in KINDS}
        if set(self.weights) != expect:
            raise ValueError("predictor bank keys do not cover every (layer, kind)")
        for key, w in self.weights.items():
            if w.shape != (self.hidden_dim, 1):
                raise ValueError(f"predictor {key} has shape {w.shape}, expected ({self.hidden_dim}, 1)")


def lazy_score(z: np.ndarray, w: np.ndarray) -> float:
    """sigmoid of the plain sum over patches of Z @ W; no 1/N normalization."""
    return float(sigmoid(float(np.sum(z @ w))))


class StepCache:
    """Module outputs from the previous executed step.

    Keys are (layer, kind, trajectory); each entry carries the timestep that
    wrote it and is readable only when the caller's expected tag matches,
    so stale generations can never be reused. Stored arrays are treated as
    immutable.
    """

    def __init__(self):
        self._store = {}

    def lookup(self, key, expected_tag):
        entry = self._store.get(key)
        if entry is None or expected_tag is None:
            return None
        tag, value = entry
        if tag != expected_tag:
            return None
        return value

    def store(self, key, tag, value: np.ndarray):
        self._store[key] = (tag, value)

    def touch(self, key, tag):
        """Re-attribute an entry to ``tag`` without changing its value.

        Called on reuse: the cached output stays alive for the next step,
        so skip chains work exactly like an untagged nonempty check, while
        entries that ever fall out of the step chain become unreadable.
        """
        _, value = self._store[key]
        self._store[key] = (tag, value)

    def clear(self):
        self._store.clear()

    def __len__(self):
        return len(self._store)


@dataclass
class RunStats:
    """Skip bookkeeping for one sampling run.

    Arrays are indexed (layer, kind, step, trajectory). The gated runtime
    evaluates the predictor on every module call, so ``scores`` is fully
    populated even on forced-compute steps; NaN marks slots never reached.
    """

    num_layers: int
    num_steps: int
    num_trajectories: int
    skip_bits: np.ndarray = None
    scores: np.ndarray = None
    computed: dict = field(default_factory=dict)  # (layer, kind) -> count
    skipped: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.num_layers, len(KINDS), self.num_steps, self.num_trajectories)
        if self.skip_bits is None:
            self.skip_bits = np.zeros(shape, dtype=np.uint8)
        if self.scores is None:
            self.scores = np.full(shape, np.nan)
        for l in range(self.num_layers):
            for k in KINDS:
                self.computed.setdefault((l, k), 0)
                self.skipped.setdefault((l, k), 0)

    def record(self, layer: int, kind: str, position: int, trajectory: int,
               skip: bool, score: float | None):
        ki = KINDS.index(kind)
        self.skip_bits[layer, ki, position, trajectory] = 1 if skip else 0
        if score is not None:
            self.scores[layer, ki, position, trajectory] = score
        if skip:
            self.skipped[(layer, kind)] += 1
        else:
            self.computed[(layer, kind)] += 1

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "num_steps": self.num_steps,
            "num_trajectories": self.num_trajectories,
            "lazy_ratio": {kind: lazy_ratio(self, kind).tolist() for kind in KINDS},
            "mean_lazy_ratio": {kind: float(lazy_ratio(self, kind).mean()) for kind in KINDS},
            "computed": {f"{l}/{k}": v for (l, k), v in sorted(self.computed.items())},
            "skipped": {f"{l}/{k}": v for (l, k), v in sorted(self.skipped.items())},
        }


def lazy_ratio(stats: RunStats, kind: str) -> np.ndarray:
    """Per-trajectory skip fraction: mean of skip bits over layers and steps."""
    ki = KINDS.index(kind)
    return stats.skip_bits[:, ki, :, :].mean(axis=(0, 1))


def mac_tally(stats: RunStats, num_patches: int, hidden_dim: int) -> dict:
    """Per-module MACs actually spent and saved, in the toy accounting.

    Attention costs 2*N*D^2 parameter MACs per evaluation (kernel weight
    and value matmuls), feedforward N*D^2; skipped evaluations count as
    saved. Keys are "layer/kind".
    """
    per_eval = {"attn": 2 * num_patches * hidden_dim * hidden_dim,
                "feed": num_patches * hidden_dim * hidden_dim}
    spent = {f"{l}/{k}": stats.computed[(l, k)] * per_eval[k]
             for (l, k) in sorted(stats.computed)}
    saved = {f"{l}/{k}": stats.skipped[(l, k)] * per_eval[k]
             for (l, k) in sorted(stats.skipped)}
    return {"spent": spent, "saved": saved,
            "total_spent": sum(spent.values()), "total_saved": sum(saved.values())}


def skip_rate_table(stats: RunStats, kind: str) -> np.ndarray:
    """(layers, steps) table of skip rates averaged over trajectories."""
    ki = KINDS.index(kind)
    return stats.skip_bits[:, ki, :, :].mean(axis=2)


def write_heatmap_csv(stats: RunStats, path):
    """Long-form export: header layer,kind,step,skip_rate; one row per cell."""
    lines = ["layer,kind,step,skip_rate"]
    for kind in KINDS:
        table = skip_rate_table(stats, kind)
        for layer in range(table.shape[0]):
            for step in range(table.shape[1]):
                lines.append(f"{layer},{kind},{step},{float(table[layer, step])!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class ModuleRecord:
    """One blended module evaluation, kept for loss and gradient work."""

    layer: int
    kind: str
    position: int
    trajectory: int
    column_sums: np.ndarray  # Z^T 1_N, the predictor's effective input
    score: float


def blended_forward(layer: int, kind: str, z: np.ndarray, *, compute, cache: StepCache,
                    bank: PredictorBank, trajectory: int, tag, expected_tag,
                    records: list | None = None, position: int = 0) -> np.ndarray:
    """Training-time forward: soft blend between fresh output and cache.

    Cache empty: compute, store, return (no score is taken). Cache hit:
    Y = (1-s) * fresh + s * cached, and the cache is refreshed with the
    fresh computation, not the blend.
    """
    key = (layer, kind, trajectory)
    cached = cache.lookup(key, expected_tag)
    fresh = compute(layer, kind, z)
    cache.store(key, tag, fresh)
    if cached is None:
        return fresh
    s = lazy_score(z, bank.weights[(layer, kind)])
    if records is not None:
        records.append(ModuleRecord(layer, kind, position, trajectory, z.sum(axis=0), s))
    return (1.0 - s) * fresh + s * cached


def gated_forward(layer: int, kind: str, z: np.ndarray, *, compute, cache: StepCache,
                  bank: PredictorBank, trajectory: int, tag, expected_tag,
                  stats: RunStats | None = None, position: int = 0,
                  threshold: float = 0.5, policy=None) -> np.ndarray:
    """Inference-time forward: hard skip on score strictly above the threshold.

    Cache empty always computes. On skip the cached matrix itself is
    returned and only its generation tag advances (skip chains keep
    reusing the last computed output); on compute the cache is refreshed.
    ``policy`` overrides the decision: "never", "always", or a callable
    (layer, kind, position, trajectory) -> bool.
    """
    key = (layer, kind, trajectory)
    cached = cache.lookup(key, expected_tag)
    score = lazy_score(z, bank.weights[(layer, kind)])
    if cached is None:
        skip = False
    elif policy is None:
        skip = score > threshold
    elif policy == "never":
        skip = False
    elif policy == "always":
        skip = True
    else:
        skip = bool(policy(layer, kind, position, trajectory))
    if stats is not None:
        stats.record(layer, kind, position, trajectory, skip, score)
    if skip:
        cache.touch(key, tag)
        return cached
    fresh = compute(layer, kind, z)
    cache.store(key, tag, fresh)
    return fresh


class _EvaluatorBase:
    """Shared step/trajectory context tracking for caching evaluators."""

    def __init__(self, model: ModelWeights):
        self._compute = dense_compute(model)
        self.cache = StepCache()
        self._position = 0
        self._tag = None
        self._expected_tag = None
        self._trajectory = 0

    def begin_step(self, position: int, timestep: int):
        self._position = position
        self._expected_tag = self._tag
        self._tag = timestep

    def begin_forward(self, trajectory: int):
        self._trajectory = trajectory

    def reset(self):
        self.cache.clear()
        self._tag = None
        self._expected_tag = None


class GatedEvaluator(_EvaluatorBase):
    """Hard-skip evaluator for accelerated sampling."""

    def __init__(self, model: ModelWeights, bank: PredictorBank, stats: RunStats | None = None,
                 threshold: float = 0.5, policy=None):
        super().__init__(model)
        self.bank = bank
        self.stats = stats
        self.threshold = threshold
        self.policy = policy

    def __call__(self, layer: int, kind: str, z: np.ndarray) -> np.ndarray:
        return gated_forward(
            layer, kind, z,
            compute=self._compute, cache=self.cache, bank=self.bank,
            trajectory=self._trajectory, tag=self._tag, expected_tag=self._expected_tag,
            stats=self.stats, position=self._position,
            threshold=self.threshold, policy=self.policy,
        )


class BlendedEvaluator(_EvaluatorBase):
    """Soft-blend evaluator for predictor training; records every scored evaluation."""

    def __init__(self, model: ModelWeights, bank: PredictorBank):
        super().__init__(model)
        self.bank = bank
        self.records = []

    def __call__(self, layer: int, kind: str, z: np.ndarray) -> np.ndarray:
        return blended_forward(
            layer, kind, z,
            compute=self._compute, cache=self.cache, bank=self.bank,
            trajectory=self._trajectory, tag=self._tag, expected_tag=self._expected_tag,
            records=self.records, position=self._position,
        )


class RecordingEvaluator(_EvaluatorBase):
    """Dense evaluator that logs (input, consecutive-output similarity) pairs.

    Used to build datasets for the linear-probe fit: whenever a module has
    a previous-step output cached, the pair (Z, cos(prev_out, out)) is
    recorded before the cache is refreshed.
    """

    def __init__(self, model: ModelWeights):
        super().__init__(model)
        self.pairs = []  # (layer, kind, z copy, similarity)

    def __call__(self, layer: int, kind: str, z: np.ndarray) -> np.ndarray:
        key = (layer, kind, self._trajectory)
        out = self._compute(layer, kind, z)
        prev = self.cache.lookup(key, self._expected_tag)
        if prev is not None:
            norm_prev = float(np.linalg.norm(prev))
            norm_out = float(np.linalg.norm(out))
            if norm_prev > 0.0 and norm_out > 0.0:
                self.pairs.append((layer, kind, z.copy(), cosine_similarity(prev, out)))
        self.cache.store(key, self._tag, out)
        return out
