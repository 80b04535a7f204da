"""Monte-Carlo oracle for the achieved mean-square error.

Samples are generated in fixed-size batches; batch ``b`` always draws from
stream ``b`` of the configured seed, so results do not depend on how many
worker threads process the batches.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimator import DEFAULT_ENUMERATION_CAP, McEstimate, full_estimates
from .model import ModelParams, RngSeed, draw_samples
from .mse import MseResult, mmse_closed_form
from .specfun import DEFAULT_CONTROL, SeriesControl

ProgressCallback = Callable[[int, float, float], None]


@dataclass
class RunningMoments:
    """Welford accumulator with an associative merge."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, values) -> None:
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            return
        other = RunningMoments(values.size, float(values.mean()),
                               float(((values - values.mean()) ** 2).sum()))
        self.merge(other)

    def merge(self, other: "RunningMoments") -> None:
        if other.count == 0:
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count else math.nan

    def estimate(self) -> McEstimate:
        return McEstimate(self.mean, self.std_error, self.count)


@dataclass(frozen=True)
class McConfig:
    n_samples: int
    seed: RngSeed | int = 0
    estimator_mode: str = "exact"
    n_subsets: int | None = None
    batch: int = 10_000
    weighting: str = "uniform"
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError(f"n_samples must be at least 100, got {self.n_samples}")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        if self.estimator_mode not in ("exact", "sampled"):
            raise ValueError(f"estimator_mode must be 'exact' or 'sampled', got {self.estimator_mode!r}")
        if self.estimator_mode == "sampled" and not self.n_subsets:
            raise ValueError("sampled mode needs n_subsets")
        if not isinstance(self.seed, RngSeed):
            object.__setattr__(self, "seed", RngSeed(int(self.seed)))


@dataclass(frozen=True)
class MseComparison:
    closed_form: float
    empirical: McEstimate
    z_score: float


@dataclass(frozen=True)
class PairedComparison:
    """Squared errors of the MMSE estimator and of the plug-in ``||y||`` on the same draws."""

    estimator: McEstimate
    plugin: McEstimate
    difference: McEstimate  # plug-in error minus estimator error, per draw

    @property
    def z(self) -> float:
        return self.difference.z_score(0.0)

    def estimator_not_worse(self, significance: float = 4.0) -> bool:
        """True unless the plug-in is better by more than ``significance`` paired SEs."""
        return self.z >= -significance


def worker_count() -> int:
    env = os.environ.get("NORM_MMSE_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _batch_errors(params, cfg, ctrl, b):
    size = min(cfg.batch, cfg.n_samples - b * cfg.batch)
    rng = cfg.seed.batch_generator(b)
    x, _, y = draw_samples(params, size, rng)
    est = full_estimates(y, params, ctrl, mode=cfg.estimator_mode, n_subsets=cfg.n_subsets,
                         rng=rng, weighting=cfg.weighting, enumeration_cap=cfg.enumeration_cap)
    norm_x = np.sqrt((x * x).sum(axis=1))
    err = (norm_x - est) ** 2
    plugin = (norm_x - np.sqrt((y * y).sum(axis=1))) ** 2
    return err, plugin


def _run(params, cfg, ctrl, progress, threads):
    n_batches = -(-cfg.n_samples // cfg.batch)
    moments = [RunningMoments(), RunningMoments(), RunningMoments()]
    threads = threads or worker_count()

    def work(b):
        err, plugin = _batch_errors(params, cfg, ctrl, b)
        out = []
        for v in (err, plugin, plugin - err):
            m = RunningMoments()
            m.update(v)
            out.append(m)
        return out

    if threads > 1 and n_batches > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(work, range(n_batches))
            _merge_all(moments, results, progress)
    else:
        _merge_all(moments, map(work, range(n_batches)), progress)
    return [m.estimate() for m in moments]


def _merge_all(moments, results, progress):
    # merge strictly in batch order for reproducibility
    for b, parts in enumerate(results):
        for acc, part in zip(moments, parts):
            acc.merge(part)
        if progress is not None:
            progress(b, moments[0].mean, moments[0].std_error)


def empirical_mmse(params: ModelParams, cfg: McConfig, ctrl: SeriesControl = DEFAULT_CONTROL,
                   progress: ProgressCallback | None = None, threads: int | None = None) -> McEstimate:
    """Average of ``(||X|| - estimate(Y))^2`` over simulated draws; the estimator sees only ``Y``."""
    return _run(params, cfg, ctrl, progress, threads)[0]


def paired_plugin_comparison(params: ModelParams, cfg: McConfig,
                             ctrl: SeriesControl = DEFAULT_CONTROL,
                             progress: ProgressCallback | None = None,
                             threads: int | None = None) -> PairedComparison:
    est, plugin, diff = _run(params, cfg, ctrl, progress, threads)
    return PairedComparison(est, plugin, diff)


def compare(params: ModelParams, cfg: McConfig, ctrl: SeriesControl = DEFAULT_CONTROL,
            closed_form: float | MseResult | None = None,
            progress: ProgressCallback | None = None, threads: int | None = None) -> MseComparison:
    """Run the simulation and the closed form side by side.

    ``closed_form`` overrides the reference value (used for negative controls).
    """
    if closed_form is None:
        closed_form = mmse_closed_form(params, ctrl)
    if isinstance(closed_form, MseResult):
        closed_form = closed_form.value
    empirical = empirical_mmse(params, cfg, ctrl, progress, threads)
    return MseComparison(float(closed_form), empirical, empirical.z_score(closed_form))
