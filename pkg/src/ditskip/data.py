"""Synthetic token datasets: a per-class Gaussian mixture over (N, D) grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import make_rng

__all__ = ["SyntheticDataset", "gen_synthetic_dataset"]


@dataclass
class SyntheticDataset:
    tokens: np.ndarray  # (size, N, D)
    labels: np.ndarray  # (size,)
    class_means: np.ndarray  # (classes, N, D)
    mean_scale: float
    noise_scale: float

    def __len__(self) -> int:
        return len(self.tokens)


def gen_synthetic_dataset(num_classes: int, num_patches: int, hidden_dim: int,
                          size: int, seed: int = 0, mean_scale: float = 1.0,
                          noise_scale: float = 0.5) -> SyntheticDataset:
    """Deterministic mixture: x = mean[class] + noise_scale * gaussian.

    Class means are themselves Gaussian draws scaled by ``mean_scale``;
    the covariance scale is shared across classes. Same seed, same bytes.
    """
    if size < 1:
        raise ValueError(f"dataset size must be >= 1, got {size}")
    if num_classes < 1:
        raise ValueError(f"need at least one class, got {num_classes}")
    rng = make_rng(seed, 0xDA7A)
    means = mean_scale * rng.standard_normal((num_classes, num_patches, hidden_dim))
    labels = rng.integers(0, num_classes, size=size)
    tokens = means[labels] + noise_scale * rng.standard_normal((size, num_patches, hidden_dim))
    return SyntheticDataset(tokens=tokens, labels=labels, class_means=means,
                            mean_scale=mean_scale, noise_scale=noise_scale)
