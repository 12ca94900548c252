"""Per-example clipping, aggregation, and Gaussian noising of gradients.

The privatized mini-batch gradient is

    g_tilde = (1/B) * sum_n clip(g_n, C)  +  (1/B) * z,   z ~ N(0, (sigma*C)^2 I)

with B the *nominal* batch size from the config, never the realized Poisson
batch size: the sensitivity analysis assumes the fixed 1/B factor. The
clipped-gradient sum is an index-ascending pairwise sum (numpy's reduction
order), and g_tilde is formed as ``sum/B + z/B`` so that the decomposition
``g_tilde == g_bar + z/B`` holds bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .models import GradientBatch
from .numerics import DOMAIN_NOISE, gaussian_vector, l2_norm, stream_key


@dataclass(frozen=True)
class PrivacyConfig:
    """Parameters of the Gaussian mechanism and the privacy target."""

    clip_norm: float            # C
    noise_multiplier: float     # sigma
    batch_size: int             # nominal B
    dataset_size: int           # N
    delta: float = 1e-5
    epsilon_target: float | None = None

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise InvalidArgumentError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise InvalidArgumentError("noise_multiplier must be >= 0")
        if not 1 <= self.batch_size <= self.dataset_size:
            raise InvalidArgumentError("need 1 <= batch_size <= dataset_size")
        if not 0 < self.delta < 1:
            raise InvalidArgumentError("delta must lie in (0, 1)")
        if self.epsilon_target is not None and self.epsilon_target <= 0:
            raise InvalidArgumentError("epsilon_target must be positive")

    @property
    def sampling_rate(self) -> float:
        return self.batch_size / self.dataset_size


@dataclass
class PrivatizedGradient:
    """One privatized gradient, plus optional diagnostics.

    ``g_bar`` (clipped mean) and ``z`` (raw noise draw) are populated only in
    diagnostics mode; they exist to reproduce moment analyses and must never
    reach a privacy-facing artifact. Only ``g_tilde`` feeds the optimizer.
    """

    g_tilde: np.ndarray
    step: int
    empty_batch: bool = False
    g_bar: np.ndarray | None = None
    z: np.ndarray | None = None


def noise_std(cfg: PrivacyConfig) -> float:
    """Per-coordinate std of the noise term in g_tilde: sigma * C / B."""
    return cfg.noise_multiplier * cfg.clip_norm / cfg.batch_size


def clip(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Rescale ``g`` onto the L2 ball of radius ``clip_norm``.

    Vectors already inside the ball are returned unchanged; direction is
    always preserved. The output's computed norm never exceeds
    clip_norm * (1 + 4 eps), and vectors at or below that bound pass through
    untouched, which makes clipping exactly idempotent despite rounding.
    """
    if clip_norm <= 0:
        raise InvalidArgumentError("clip_norm must be positive")
    g = np.asarray(g, dtype=float)
    bound = clip_norm * (1.0 + 4.0 * np.finfo(float).eps)
    norm = l2_norm(g)
    if norm <= bound:
        return g
    out = g * (clip_norm / norm)
    while l2_norm(out) > bound:  # rounding overshoot; at most one nudge in practice
        out = out * (clip_norm / l2_norm(out))
    return out


def privatize(batch: GradientBatch, cfg: PrivacyConfig, seed: int, step: int,
              diagnostics: bool = False) -> PrivatizedGradient:
    """Clip, average, and noise one mini-batch of per-example gradients.

    The noise draw comes from the (seed, NOISE+step) stream, so a fixed
    (seed, step) pair always produces the same g_tilde. An empty batch
    (possible under Poisson sampling) yields the pure-noise update
    (1/B) * z with g_bar = 0, flagged via ``empty_batch``.
    """
    per_example = np.asarray(batch.per_example, dtype=float)
    if per_example.ndim != 2:
        raise InvalidArgumentError("per-example gradients must be a 2-D matrix")
    dim = per_example.shape[1]
    if dim < 1:
        raise InvalidArgumentError("gradient dimension must be >= 1")

    if batch.size == 0:
        clipped_sum = np.zeros(dim)
    else:
        clipped = np.stack([clip(row, cfg.clip_norm) for row in per_example])
        clipped_sum = np.sum(clipped, axis=0)

    z = gaussian_vector(seed, stream_key(DOMAIN_NOISE, step), dim,
                        cfg.noise_multiplier * cfg.clip_norm)
    g_bar = clipped_sum / cfg.batch_size
    g_tilde = g_bar + z / cfg.batch_size
    out = PrivatizedGradient(g_tilde=g_tilde, step=step, empty_batch=batch.size == 0)
    if diagnostics:
        out.g_bar = g_bar
        out.z = z
    return out
