"""Spectral norms of per-example Hessians via matrix-free power iteration.

Only the spectral norm is estimated (no Lanczos, no full spectrum): it is
the single second-order quantity the stability bounds consume, both as the
per-example curvature at the initialization point and as its sample mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .models import Dataset, Example, LossModel

Array = np.ndarray

_ZERO_IMAGE = 1e-14


class NumericError(ArithmeticError):
    """The supplied operator produced a non-finite image."""


@dataclass(frozen=True)
class PowerIterConfig:
    tol: float = 1e-8       # relative change of the Rayleigh magnitude between sweeps
    max_iter: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations: int
    converged: bool


def _unit_start(dim: int, rng: np.random.Generator) -> Array:
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    while n == 0.0:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
    return v / n


def _apply_checked(apply_H: Callable[[Array], Array], v: Array) -> Array:
    out = np.asarray(apply_H(v), dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericError("operator returned a non-finite image")
    return out


def power_iteration_spectral_norm(
    apply_H: Callable[[Array], Array], dim: int, cfg: Optional[PowerIterConfig] = None
) -> SpectralEstimate:
    """Largest |eigenvalue| of a symmetric operator given only v -> Hv.

    Sweeps stop once the Rayleigh-quotient magnitude changes by no more
    than ``cfg.tol`` relatively.  A stalled Rayleigh quotient that
    disagrees with ||Hv|| signals the near-degenerate +/-lambda pair, in
    which case iteration restarts on H^2 (two applies per sweep) and the
    square root of its dominant eigenvalue is reported.
    """
    cfg = cfg or PowerIterConfig()
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    v = _unit_start(dim, rng)
    image = _apply_checked(apply_H, v)
    if np.linalg.norm(image) <= _ZERO_IMAGE:
        # one re-randomization, then accept the zero operator
        v = _unit_start(dim, rng)
        image = _apply_checked(apply_H, v)
        if np.linalg.norm(image) <= _ZERO_IMAGE:
            return SpectralEstimate(value=0.0, iterations=1, converged=True)

    osc_slack = max(1e-6, np.sqrt(cfg.tol))
    prev = None
    sweeps = 0
    while sweeps < cfg.max_iter:
        sweeps += 1
        rayleigh = abs(float(v @ image))
        img_norm = float(np.linalg.norm(image))
        if prev is not None and abs(rayleigh - prev) <= cfg.tol * max(rayleigh, _ZERO_IMAGE):
            if img_norm - rayleigh <= osc_slack * max(img_norm, _ZERO_IMAGE):
                return SpectralEstimate(value=rayleigh, iterations=sweeps, converged=True)
            break  # Rayleigh stalled away from ||Hv||: oscillating +/- pair
        prev = rayleigh
        if img_norm <= _ZERO_IMAGE:
            return SpectralEstimate(value=0.0, iterations=sweeps, converged=True)
        v = image / img_norm
        image = _apply_checked(apply_H, v)

    return _power_iteration_squared(apply_H, v, cfg, sweeps)


def _power_iteration_squared(apply_H, v, cfg: PowerIterConfig, used: int) -> SpectralEstimate:
    """Power iteration on H^2; returns sqrt of its dominant eigenvalue."""
    prev = None
    sweeps = used
    value = 0.0
    while sweeps < cfg.max_iter:
        sweeps += 1
        image = _apply_checked(apply_H, _apply_checked(apply_H, v))
        rayleigh = abs(float(v @ image))
        value = float(np.sqrt(rayleigh))
        if prev is not None and abs(value - prev) <= cfg.tol * max(value, _ZERO_IMAGE):
            return SpectralEstimate(value=value, iterations=sweeps, converged=True)
        prev = value
        n = float(np.linalg.norm(image))
        if n <= _ZERO_IMAGE:
            return SpectralEstimate(value=0.0, iterations=sweeps, converged=True)
        v = image / n
    return SpectralEstimate(value=value, iterations=sweeps, converged=False)


def example_hessian_norm(
    model: LossModel, w: Array, z: Example, cfg: Optional[PowerIterConfig] = None
) -> SpectralEstimate:
    """Spectral norm of the per-example Hessian at w, matrix-free."""
    return power_iteration_spectral_norm(
        lambda v: model.hvp(w, z, v), model.param_dim, cfg
    )


@dataclass(frozen=True)
class MeanSpectralNorm:
    mean: float
    stderr: float
    n: int
    values: Array
    all_converged: bool


def expected_hessian_norm(
    model: LossModel, w1: Array, sample: Dataset, cfg: Optional[PowerIterConfig] = None
) -> MeanSpectralNorm:
    """Empirical mean of per-example Hessian spectral norms at w1.

    The expectation over fresh examples is replaced by a plain average over
    ``sample``; which split that sample comes from (train or held-out) is
    the caller's reported choice.  Per-example power iterations get
    independent start seeds derived from ``cfg.seed``.
    """
    cfg = cfg or PowerIterConfig()
    seeds = np.random.SeedSequence(cfg.seed).generate_state(sample.m)
    vals = np.empty(sample.m)
    all_conv = True
    for i, z in enumerate(sample.examples()):
        est = example_hessian_norm(
            model, w1, z, PowerIterConfig(tol=cfg.tol, max_iter=cfg.max_iter, seed=int(seeds[i]))
        )
        vals[i] = est.value
        all_conv = all_conv and est.converged
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(sample.m)) if sample.m > 1 else 0.0
    return MeanSpectralNorm(mean=mean, stderr=stderr, n=sample.m, values=vals, all_converged=all_conv)


def hvp_finite_difference(
    grad_closure: Callable[[Array, Example], Array], w: Array, z: Example, v: Array, h: float
) -> Array:
    """Central-difference Hessian-vector product: fallback and test oracle."""
    if h <= 0:
        raise ValueError("h must be > 0")
    v = np.asarray(v, dtype=float)
    return (grad_closure(w + h * v, z) - grad_closure(w - h * v, z)) / (2.0 * h)
