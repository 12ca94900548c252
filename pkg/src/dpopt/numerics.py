"""Deterministic vector numerics shared by every module.

All randomness in the package flows through counter-based Philox streams
keyed by ``(seed, stream_id)``: two calls with the same key return the same
bits, and distinct keys give statistically independent streams. Stream ids
are partitioned into domains (data generation, batch sampling, per-step
noise, ...) via :func:`stream_key` so that no two uses of the same seed can
ever collide.

All arithmetic is 64-bit; second-moment biases of order 1e-8 sit near the
round-off of float32 storage, which is therefore not offered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Fixed, versioned generator. Changing this constant invalidates every
# recorded run, so it is part of the package's compatibility contract.
RNG_ALGORITHM = "philox4x64-10 (numpy.random.Philox)"

# Stream-id domains. Step / trial indices occupy the low 48 bits.
DOMAIN_DATA = 1
DOMAIN_SPLIT = 2
DOMAIN_INIT = 3
DOMAIN_BATCH = 4
DOMAIN_NOISE = 5
DOMAIN_TRIAL = 6

_INDEX_BITS = 48
_INDEX_MASK = (1 << _INDEX_BITS) - 1


def stream_key(domain: int, index: int = 0) -> int:
    """Pack a domain tag and a step/trial index into one 64-bit stream id."""
    if not 0 <= index <= _INDEX_MASK:
        raise InvalidArgumentError(f"stream index out of range: {index}")
    return ((domain & 0xFFFF) << _INDEX_BITS) | index


def rng_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Independent generator for the (seed, stream_id) pair."""
    key = np.array([seed % 2**64, stream_id % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def gaussian_vector(seed: int, stream_id: int, dim: int, std: float) -> np.ndarray:
    """Draw ``dim`` i.i.d. N(0, std^2) samples from the (seed, stream_id) stream.

    Bit-for-bit reproducible: identical arguments give identical output.
    ``std == 0`` returns exact zeros without consuming the stream.
    """
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    if std < 0:
        raise InvalidArgumentError(f"std must be >= 0, got {std}")
    if std == 0.0:
        return np.zeros(dim)
    return std * rng_stream(seed, stream_id).standard_normal(dim)


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm of a flat parameter vector."""
    return float(np.linalg.norm(np.asarray(v, dtype=float)))


@dataclass(frozen=True)
class SummaryStats:
    """Five-number summary plus the mean.

    ``method`` records the quartile convention ("linear" = interpolation
    between closest ranks) so emitted tables are self-describing.
    """

    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    method: str = "linear"


def summarize(values) -> SummaryStats:
    """Summary statistics of a nonempty sequence of reals."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidArgumentError("summarize requires a nonempty input")
    arr = np.sort(arr)  # fixes the summation order: permutation-invariant output
    lo, q1, med, q3, hi = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return SummaryStats(
        min=float(lo), q1=float(q1), median=float(med), q3=float(q3),
        max=float(hi), mean=float(arr.mean()),
    )


@dataclass(frozen=True)
class Histogram:
    """Bin counts over ``[edges[i], edges[i+1])``, last bin closed on the right.

    Out-of-range samples are tallied in ``underflow`` / ``overflow`` so that
    ``counts.sum() + underflow + overflow`` equals the input length.
    """

    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def histogram(values, edges) -> Histogram:
    """Histogram of ``values`` over explicit bin edges."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise InvalidArgumentError("need at least 2 bin edges")
    if not np.all(np.diff(edges) > 0):
        raise InvalidArgumentError("bin edges must be strictly increasing")
    arr = np.asarray(values, dtype=float).ravel()
    counts, _ = np.histogram(arr, bins=edges)
    underflow = int(np.count_nonzero(arr < edges[0]))
    overflow = int(np.count_nonzero(arr > edges[-1]))
    return Histogram(edges=edges, counts=counts, underflow=underflow, overflow=overflow)
