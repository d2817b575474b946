"""Multiply-accumulate accounting for transformer sampling runs.

Counts parameterized (weight) matmuls per step: per layer, the attention
projections, the feedforward, and the six modulation maps. The
activation-side products inside attention (score and mixing matmuls,
2 N^2 D) are excluded by default, matching parameter-counting FLOPs
tools; the inclusive figure is always reported alongside. A lazy run
scales the skippable module matmuls by (1 - lazy_ratio); modulation is
never skipped, and the per-module skip predictors cost 2 L N D per step
when enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

__all__ = ["ArchSpec", "PRESETS", "preset", "layer_macs", "mac_count", "mac_report"]


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor for MAC counting.

    ``has_qkv_proj`` selects the realistic block (separate Q/K/V and
    output projections, expanded MLP of width mlp_ratio * D); without it
    the accounting follows the executable toy block (one kernel-weight
    and one value matmul for attention, a single linear feedforward).
    """

    num_layers: int
    hidden_dim: int
    num_tokens: int
    mlp_ratio: float = 4.0
    patch: int = 2
    has_qkv_proj: bool = True
    count_activation_matmuls: bool = False
    lazy_predictor_overhead: bool = False

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.num_tokens < 1:
            raise ValueError(f"invalid architecture: {self}")

    @classmethod
    def from_resolution(cls, image_size: int, num_layers: int, hidden_dim: int,
                        vae_factor: int = 8, patch: int = 2, **kwargs) -> "ArchSpec":
        side = image_size // vae_factor // patch
        return cls(num_layers=num_layers, hidden_dim=hidden_dim,
                   num_tokens=side * side, patch=patch, **kwargs)


PRESETS = {
    "xl2-256": ArchSpec.from_resolution(256, num_layers=28, hidden_dim=1152),
    "xl2-512": ArchSpec.from_resolution(512, num_layers=28, hidden_dim=1152),
}


def preset(name: str) -> ArchSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def layer_macs(arch: ArchSpec) -> dict:
    """Per-layer MACs split into skippable module work and fixed modulation."""
    n, d = arch.num_tokens, arch.hidden_dim
    if arch.has_qkv_proj:
        attn = 3 * n * d * d + n * d * d  # QKV projections + output projection
        ff = 2 * arch.mlp_ratio * n * d * d  # up and down projections
    else:
        attn = 2 * n * d * d  # kernel-weight and value matmuls
        ff = n * d * d  # single linear map
    activation = 2 * n * n * d if arch.count_activation_matmuls else 0
    return {
        "attn": float(attn + activation),
        "feed": float(ff),
        "modulation": float(6 * d * d),
    }


def mac_count(arch: ArchSpec, steps: int, lazy_ratio: float = 0.0) -> float:
    """Total TMACs for a sampling run; one network evaluation per step."""
    if not 0.0 <= lazy_ratio <= 1.0:
        raise ValueError(f"lazy_ratio must lie in [0, 1], got {lazy_ratio}")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    per_layer = layer_macs(arch)
    skippable = per_layer["attn"] + per_layer["feed"]
    per_step = arch.num_layers * (skippable * (1.0 - lazy_ratio) + per_layer["modulation"])
    if arch.lazy_predictor_overhead:
        per_step += 2 * arch.num_layers * arch.num_tokens * arch.hidden_dim
    return per_step * steps / 1e12


def mac_report(arch: ArchSpec, steps: int, lazy_ratio: float = 0.0) -> dict:
    """TMACs under the default convention plus the activation-inclusive figure."""
    exclusive = replace(arch, count_activation_matmuls=False)
    inclusive = replace(arch, count_activation_matmuls=True)
    per_layer = layer_macs(arch)
    return {
        "preset": None,
        "steps": steps,
        "lazy_ratio": lazy_ratio,
        "tmacs": mac_count(arch, steps, lazy_ratio),
        "tmacs_with_activation_matmuls": mac_count(inclusive, steps, lazy_ratio),
        "tmacs_weight_matmuls_only": mac_count(exclusive, steps, lazy_ratio),
        "per_layer_macs": per_layer,
        "predictor_overhead_per_step": (
            2 * arch.num_layers * arch.num_tokens * arch.hidden_dim
            if arch.lazy_predictor_overhead else 0
        ),
        "arch": {
            "num_layers": arch.num_layers,
            "hidden_dim": arch.hidden_dim,
            "num_tokens": arch.num_tokens,
            "mlp_ratio": arch.mlp_ratio,
            "patch": arch.patch,
            "has_qkv_proj": arch.has_qkv_proj,
            "count_activation_matmuls": arch.count_activation_matmuls,
            "lazy_predictor_overhead": arch.lazy_predictor_overhead,
        },
    }
