"""Shared test utilities: finite-difference oracles and tolerance checks."""

from __future__ import annotations

import numpy as np

from metaweight.backbones import BackboneArch, Example, ModelState, build_embedding
from metaweight.data import ShiftSpec, gen_synthetic_shift
from metaweight.vectors import RngState


def central_difference_gradient(func, x0: np.ndarray, h: float) -> np.ndarray:
    """Coordinate-wise central differences of a scalar function."""
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        up = x0.copy()
        up[i] += h
        down = x0.copy()
        down[i] -= h
        grad[i] = (func(up) - func(down)) / (2.0 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest |a - b| / max(|a|, |b|) over coordinates where either side
    exceeds `floor`; coordinates below the floor on both sides are skipped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(b))
    mask = scale > floor
    if not mask.any():
        return 0.0
    return float((np.abs(a - b)[mask] / scale[mask]).max())


def small_arch(kind: str, dim: int = 4, hidden: int = 8, buckets: int = 256, seed: int = 11) -> BackboneArch:
    return BackboneArch(kind, build_embedding(seed, buckets, dim), 2, hidden_dim=hidden)


def small_task(seed: int = 3, n_source: int = 32, n_target: int = 16, flip: float = 0.0):
    spec = ShiftSpec(
        n_source=n_source,
        n_target=n_target,
        source_vocab=12,
        target_vocab=12,
        flip_fraction=flip,
    )
    return gen_synthetic_shift(spec, RngState(seed))


def random_model(arch: BackboneArch, seed: int) -> ModelState:
    return ModelState(arch.init_params(seed), arch)


def make_example(a, b, label: int) -> Example:
    return Example(tuple(a), tuple(b), label)
