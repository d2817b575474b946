"""Dense float64 linear algebra and elementwise primitives.

Everything in the package runs on plain 2-D numpy float64 arrays. The
helpers here add the shape validation, the deterministic PRNG plumbing,
and the few nontrivial kernels (power-iteration spectral norm, trace
cosine similarity) that the rest of the modules build on.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeMismatchError",
    "ZeroNormError",
    "ConvergenceError",
    "as_matrix",
    "make_rng",
    "matmul",
    "frobenius_norm",
    "spectral_norm",
    "cosine_similarity",
    "sigmoid",
    "silu",
    "hadamard",
    "elementwise",
]


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; message names both."""


class ZeroNormError(ValueError):
    """An operation that divides by a norm received a zero-norm input."""


class ConvergenceError(RuntimeError):
    """Iteration did not converge; carries the last estimate."""

    def __init__(self, message: str, last_estimate: float):
        super().__init__(message)
        self.last_estimate = last_estimate


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for (seed, *stream).

    Same arguments give a bit-identical stream on every platform; distinct
    stream keys give statistically independent substreams.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit inner-dimension validation."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def frobenius_norm(a) -> float:
    """sqrt of the sum of squared entries."""
    a = as_matrix(a)
    return float(np.sqrt(np.sum(a * a)))


def spectral_norm(a, tol: float = 1e-10, max_iters: int = 10_000, seed: int = 0) -> float:
    """Largest singular value via power iteration on A^T A.

    Starts from the normalized all-ones vector; if that start vector is
    annihilated (zero Rayleigh quotient) the iteration restarts from a
    seeded random vector. Stops when the relative change of the estimate
    drops below ``tol``; raises ConvergenceError (carrying the last
    estimate) if ``max_iters`` is exhausted first.
    """
    a = as_matrix(a)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    n = gram.shape[0]
    v = np.ones(n) / np.sqrt(n)
    rng = make_rng(seed, 0x5EC7)
    for _ in range(4):
        if float(v @ gram @ v) > 0.0:
            break
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
    sigma = float(np.sqrt(max(v @ gram @ v, 0.0)))
    for _ in range(max_iters):
        w = gram @ v
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            # v fell exactly into the null space; the matrix is nonzero, so restart.
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
        new_sigma = float(np.sqrt(max(v @ gram @ v, 0.0)))
        if abs(new_sigma - sigma) <= tol * max(new_sigma, np.finfo(float).tiny):
            return new_sigma
        sigma = new_sigma
    raise ConvergenceError(
        f"power iteration did not converge within {max_iters} iterations (last estimate {sigma})",
        sigma,
    )


def cosine_similarity(x, y) -> float:
    """tr(X^T Y) / (||X||_F ||Y||_F); symmetric, scale-invariant."""
    x = as_matrix(x, "first argument")
    y = as_matrix(y, "second argument")
    if x.shape != y.shape:
        raise ShapeMismatchError(f"cosine similarity needs equal shapes, got {x.shape} and {y.shape}")
    nx = float(np.sqrt(np.sum(x * x)))
    ny = float(np.sqrt(np.sum(y * y)))
    if nx == 0.0 or ny == 0.0:
        raise ZeroNormError("cosine similarity is undefined for zero-norm inputs")
    return float(np.sum(x * y) / (nx * ny))


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def silu(x):
    """x * sigmoid(x), elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def hadamard(a, b) -> np.ndarray:
    """Entrywise product; shapes must match exactly."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


_ELEMENTWISE = {
    "silu": lambda x: silu(x),
    "sigmoid": lambda x: sigmoid(np.asarray(x, dtype=np.float64)),
    "hadamard": hadamard,
    "add": lambda a, b: np.asarray(a, dtype=np.float64) + np.asarray(b, dtype=np.float64),
    "scale": lambda a, c: np.asarray(a, dtype=np.float64) * float(c),
}


def elementwise(kind: str, *args):
    """Dispatch on {silu, sigmoid, hadamard, add, scale}."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)
