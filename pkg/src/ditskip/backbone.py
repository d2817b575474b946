"""Toy diffusion-transformer backbone.

Each block runs two sub-modules in order, attention then feedforward,
both wrapped in per-row scale/shift modulation derived from timestep and
class embeddings, a learned output gate, and a residual connection.
Attention is single-head with a raw exp kernel and row normalization;
feedforward is a single linear map. Module evaluation is delegated to a
``compute(layer, kind, z)`` callable so a caching runtime can intercept
it without touching the wiring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeMismatchError, make_rng, silu

KINDS = ("attn", "feed")

__all__ = [
    "KINDS",
    "ModelConfig",
    "ModulationParams",
    "BlockWeights",
    "ModelWeights",
    "AttentionOverflowError",
    "init_model_weights",
    "identity_modulation",
    "timestep_embedding",
    "embed_condition",
    "modulation_factors",
    "modulate",
    "attention_forward",
    "feedforward_forward",
    "block_forward",
    "model_forward",
    "dense_compute",
]


class AttentionOverflowError(FloatingPointError):
    """An attention logit exceeded the configured cap before exp."""

    def __init__(self, max_logit: float, cap: float):
        super().__init__(f"attention logit {max_logit:.3g} exceeds cap {cap:.3g}")
        self.max_logit = max_logit
        self.cap = cap


@dataclass(frozen=True)
class ModelConfig:
    """Static shape and safety parameters of the backbone."""

    num_layers: int = 4
    num_patches: int = 16
    hidden_dim: int = 32
    train_steps: int = 1000
    num_classes: int = 10
    spectral_clip: float | None = None  # if set, every weight matrix gets ||W|| <= clip
    logit_cap: float = 60.0

    def __post_init__(self):
        if self.num_layers < 0 or self.num_patches < 1 or self.hidden_dim < 1:
            raise ValueError(f"invalid model dimensions: {self}")
        if self.num_classes < 1 or self.train_steps < 1:
            raise ValueError(f"invalid model config: {self}")


@dataclass
class ModulationParams:
    """Affine maps producing scale, shift, and output gate from the condition vector."""

    scale_weight: np.ndarray
    scale_bias: np.ndarray
    shift_weight: np.ndarray
    shift_bias: np.ndarray
    gate_weight: np.ndarray
    gate_bias: np.ndarray


@dataclass
class BlockWeights:
    query: np.ndarray
    key: np.ndarray
    value: np.ndarray
    feed: np.ndarray
    modulation: dict = field(default_factory=dict)  # kind -> ModulationParams


@dataclass
class ModelWeights:
    config: ModelConfig
    class_table: np.ndarray  # (num_classes + 1, D); last row is the null token
    blocks: list
    head: np.ndarray  # (D, D) final linear map to the noise prediction

    def weight_matrices(self):
        """All (name, array) pairs in a fixed declaration order."""
        yield "class_table", self.class_table
        for i, blk in enumerate(self.blocks):
            yield f"block{i}.query", blk.query
            yield f"block{i}.key", blk.key
            yield f"block{i}.value", blk.value
            yield f"block{i}.feed", blk.feed
            for kind in KINDS:
                mod = blk.modulation[kind]
                yield f"block{i}.{kind}.scale_weight", mod.scale_weight
                yield f"block{i}.{kind}.scale_bias", mod.scale_bias
                yield f"block{i}.{kind}.shift_weight", mod.shift_weight
                yield f"block{i}.{kind}.shift_bias", mod.shift_bias
                yield f"block{i}.{kind}.gate_weight", mod.gate_weight
                yield f"block{i}.{kind}.gate_bias", mod.gate_bias
        yield "head", self.head


def _clip_spectral(w: np.ndarray, limit: float | None) -> np.ndarray:
    if limit is None or w.ndim != 2:
        return w
    top = np.linalg.norm(w, 2)
    if top > limit:
        w = w * (limit / top)
    return w


def init_model_weights(config: ModelConfig, seed: int = 0) -> ModelWeights:
    """Deterministic initialization: entries i.i.d. U(-1/sqrt(D), 1/sqrt(D)).

    Gate biases start at all-ones so a zero condition vector leaves module
    outputs ungated. With ``spectral_clip`` set, every weight matrix is
    rescaled to spectral norm <= clip after sampling.
    """
    d = config.hidden_dim
    rng = make_rng(seed, 0xD17)
    bound = 1.0 / np.sqrt(d)

    def mat():
        return _clip_spectral(rng.uniform(-bound, bound, size=(d, d)), config.spectral_clip)

    def vec():
        return rng.uniform(-bound, bound, size=d)

    class_table = rng.uniform(-bound, bound, size=(config.num_classes + 1, d))
    blocks = []
    for _ in range(config.num_layers):
        modulation = {}
        for kind in KINDS:
            modulation[kind] = ModulationParams(
                scale_weight=mat(),
                scale_bias=vec(),
                shift_weight=mat(),
                shift_bias=vec(),
                gate_weight=mat(),
                gate_bias=np.ones(d),
            )
        blocks.append(BlockWeights(query=mat(), key=mat(), value=mat(), feed=mat(), modulation=modulation))
    head = _clip_spectral(rng.uniform(-bound, bound, size=(d, d)), config.spectral_clip)
    return ModelWeights(config=config, class_table=class_table, blocks=blocks, head=head)


def identity_modulation(model: ModelWeights) -> ModelWeights:
    """Copy of the model with scale=1, shift=0, gate=1 for every module.

    With identity modulation a block reduces to the bare residual
    composition x + attn(x), then + feed(.), which is what the bound
    verifiers analyze.
    """
    d = model.config.hidden_dim
    blocks = []
    for blk in model.blocks:
        modulation = {}
        for kind in KINDS:
            modulation[kind] = ModulationParams(
                scale_weight=np.zeros((d, d)),
                scale_bias=np.ones(d),
                shift_weight=np.zeros((d, d)),
                shift_bias=np.zeros(d),
                gate_weight=np.zeros((d, d)),
                gate_bias=np.ones(d),
            )
        blocks.append(
            BlockWeights(
                query=blk.query.copy(),
                key=blk.key.copy(),
                value=blk.value.copy(),
                feed=blk.feed.copy(),
                modulation=modulation,
            )
        )
    return ModelWeights(
        config=model.config,
        class_table=model.class_table.copy(),
        blocks=blocks,
        head=model.head.copy(),
    )


def timestep_embedding(t: float, dim: int, base: float = 10_000.0) -> np.ndarray:
    """Interleaved sin/cos embedding: out[2i] = sin(t w_i), out[2i+1] = cos(t w_i)."""
    half = (dim + 1) // 2
    freqs = base ** (-2.0 * np.arange(half) / dim)
    angles = float(t) * freqs
    out = np.empty(2 * half)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out[:dim]


def embed_condition(model: ModelWeights, t: int, c: int | None) -> np.ndarray:
    """Condition vector y = SiLU(emb(t) + emb(c)); c=None selects the null token."""
    cfg = model.config
    if not 0 <= t <= cfg.train_steps:
        raise ValueError(f"timestep {t} outside [0, {cfg.train_steps}]")
    if c is None:
        row = cfg.num_classes
    else:
        if not 0 <= c < cfg.num_classes:
            raise ValueError(f"class index {c} outside [0, {cfg.num_classes})")
        row = c
    return silu(timestep_embedding(t, cfg.hidden_dim) + model.class_table[row])


def modulation_factors(model: ModelWeights, layer: int, kind: str, cond: np.ndarray):
    """(scale, shift, gate) vectors for one sub-module at one layer."""
    mod = model.blocks[layer].modulation[kind]
    scale = mod.scale_weight @ cond + mod.scale_bias
    shift = mod.shift_weight @ cond + mod.shift_bias
    gate = mod.gate_weight @ cond + mod.gate_bias
    return scale, shift, gate


def modulate(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Per-column affine map broadcast over rows: z[i,j] = scale[j]*x[i,j] + shift[j]."""
    if x.ndim != 2 or scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeMismatchError(
            f"modulate: x {x.shape} needs scale/shift of shape ({x.shape[1]},), "
            f"got {scale.shape} and {shift.shape}"
        )
    return x * scale[None, :] + shift[None, :]


def attention_forward(z: np.ndarray, query: np.ndarray, key: np.ndarray, value: np.ndarray,
                      logit_cap: float = 60.0) -> np.ndarray:
    """Single-head exp-kernel attention.

    out = rownorm(exp(Z W Z^T)) @ (Z W_value) with W = W_query W_key^T.
    No 1/sqrt(d) scaling and no output projection. Logits above
    ``logit_cap`` raise AttentionOverflowError instead of overflowing.
    """
    w = query @ key.T
    logits = z @ w @ z.T
    max_logit = float(logits.max())
    if max_logit > logit_cap:
        raise AttentionOverflowError(max_logit, logit_cap)
    kernel = np.exp(logits)
    weights = kernel / kernel.sum(axis=1, keepdims=True)
    return weights @ (z @ value)


def feedforward_forward(z: np.ndarray, feed: np.ndarray) -> np.ndarray:
    """Pointwise linear module: z @ W_feed."""
    if z.shape[1] != feed.shape[0]:
        raise ShapeMismatchError(f"feedforward: cannot multiply {z.shape} by {feed.shape}")
    return z @ feed


def dense_compute(model: ModelWeights):
    """Plain module evaluator: always computes, never caches."""

    def compute(layer: int, kind: str, z: np.ndarray) -> np.ndarray:
        blk = model.blocks[layer]
        if kind == "attn":
            return attention_forward(z, blk.query, blk.key, blk.value, model.config.logit_cap)
        return feedforward_forward(z, blk.feed)

    return compute


def block_forward(model: ModelWeights, layer: int, x: np.ndarray, cond: np.ndarray, compute) -> np.ndarray:
    """One block: for each sub-module, modulate, evaluate, gate, add residual."""
    for kind in KINDS:
        scale, shift, gate = modulation_factors(model, layer, kind, cond)
        z = modulate(x, scale, shift)
        y = compute(layer, kind, z)
        x = x + gate[None, :] * y
    return x


def model_forward(model: ModelWeights, z_t: np.ndarray, t: int, c: int | None, compute=None) -> np.ndarray:
    """Noise prediction for one sample: L blocks then the linear head."""
    if compute is None:
        compute = dense_compute(model)
    cond = embed_condition(model, t, c)
    x = np.asarray(z_t, dtype=np.float64)
    if x.shape != (model.config.num_patches, model.config.hidden_dim):
        raise ShapeMismatchError(
            f"latent shape {x.shape} does not match model "
            f"({model.config.num_patches}, {model.config.hidden_dim})"
        )
    for layer in range(model.config.num_layers):
        x = block_forward(model, layer, x, cond, compute)
    return x @ model.head
