"""Measurement model: Y = B X + N with a uniform random K-subset mask."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Ambient dimension ``n``, number of retained entries ``k_retained``, noise std ``sigma``."""

    n: int
    k_retained: int
    sigma: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.k_retained) != self.k_retained or not 0 <= self.k_retained <= self.n:
            raise ValueError(f"k_retained must be an integer in [0, n={self.n}], got {self.k_retained!r}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "k_retained", int(self.k_retained))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def j_missing(self) -> int:
        return self.n - self.k_retained

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    @property
    def n_subsets(self) -> int:
        return math.comb(self.n, self.k_retained)


@dataclass(frozen=True)
class MaskPattern:
    """Retained coordinates, as strictly increasing 1-based indices."""

    support: tuple[int, ...]
    n: int

    def __post_init__(self):
        s = tuple(int(i) for i in self.support)
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError(f"support must be strictly increasing, got {s}")
        if s and (s[0] < 1 or s[-1] > self.n):
            raise ValueError(f"support indices must lie in 1..{self.n}, got {s}")
        object.__setattr__(self, "support", s)

    @classmethod
    def from_indices(cls, indices: Sequence[int], n: int) -> "MaskPattern":
        """Build from 0-based indices in any order."""
        return cls(tuple(sorted(int(i) + 1 for i in indices)), n)

    @property
    def k_retained(self) -> int:
        return len(self.support)

    @property
    def indices(self) -> np.ndarray:
        """0-based indices of the retained coordinates."""
        return np.asarray(self.support, dtype=np.intp) - 1

    def as_bool(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.indices] = True
        return mask

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.as_bool())


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    mask: MaskPattern
    y: np.ndarray

    def to_csv_fields(self, precision: int = 10) -> list[str]:
        """``x_1..x_n, mask bitstring, y_1..y_n`` as strings."""
        fmt = f"{{:.{precision}g}}"
        return ([fmt.format(v) for v in self.x] + [self.mask.bitstring()]
                + [fmt.format(v) for v in self.y])


@dataclass(frozen=True)
class RngSeed:
    """A ``(seed, stream)`` pair; distinct pairs give independent generators."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < 2 ** 64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        # PCG64 + numpy's ziggurat normals; the one place sampling is pinned.
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def batch_generator(self, batch: int) -> np.random.Generator:
        """Generator for sub-batch ``batch`` of this stream."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(batch)))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an :class:`RngSeed`, an int seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    return np.random.default_rng(rng)


def sample_mask(params: ModelParams, rng) -> MaskPattern:
    """Uniform K-subset via a shuffle truncated to its first K positions."""
    rng = as_generator(rng)
    idx = rng.permutation(params.n)[: params.k_retained]
    return MaskPattern.from_indices(idx, params.n)


def sample_masks(params: ModelParams, size: int, rng) -> np.ndarray:
    """Boolean ``(size, n)`` array of independent uniform K-subset masks.

    Ranking i.i.d. uniform keys gives a uniformly random permutation per row,
    so the first K ranks form an exactly uniform subset.
    """
    rng = as_generator(rng)
    keys = rng.random((size, params.n))
    order = np.argsort(keys, axis=1, kind="stable")[:, : params.k_retained]
    mask = np.zeros((size, params.n), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def draw_sample(params: ModelParams, rng) -> Sample:
    rng = as_generator(rng)
    x = rng.standard_normal(params.n)
    mask = sample_mask(params, rng)
    noise = params.sigma * rng.standard_normal(params.n)
    y = noise.copy()
    y[mask.indices] += x[mask.indices]
    return Sample(x=x, mask=mask, y=y)


def draw_samples(params: ModelParams, size: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized draws: returns ``(x, mask, y)`` with shapes ``(size, n)``."""
    rng = as_generator(rng)
    x = rng.standard_normal((size, params.n))
    mask = sample_masks(params, size, rng)
    y = params.sigma * rng.standard_normal((size, params.n))
    y += np.where(mask, x, 0.0)
    return x, mask, y
