"""Monte-Carlo lab for the moment behavior of Adam under DP noise.

Runs the first- and second-moment EMA recursions twice on the *same*
clipped-gradient draws — once clean, once with independent N(0, s^2) noise
added per step (s = sigma*C/B) — and checks the two analytic facts that
drive the corrected optimizer:

* the noise leaves the first-moment EMA unbiased;
* it shifts the second-moment EMA by exactly (1 - beta2^t) * s^2.

Gradient streams are stationary per-coordinate families: Gaussian
(mean, std) by default, or variance-matched scaled Student-t for
heavy-tailed robustness checks. Every trial derives its own RNG stream from
(seed, trial_index); within a trial the draw order is fixed (per step chunk:
gradients first, then noise), so results are reproducible regardless of how
trials are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .numerics import (DOMAIN_TRIAL, Histogram, SummaryStats, histogram,
                       rng_stream, stream_key, summarize)
from .optimizers import noise_bias

# Steps are simulated in chunks of this many draws per trial to bound memory.
_CHUNK_STEPS = 64

# Fig.2-analog binning, recorded in emitted metadata: updates on a fixed
# linear grid, v-quantities on data-driven log10 bins.
UPDATE_BIN_RANGE = (-1.5, 1.5)
UPDATE_BIN_COUNT = 60
V_BINS_PER_DECADE = 4


@dataclass
class MomentSimConfig:
    """Configuration of one moment simulation."""

    dim: int
    steps: int
    noise_std: float              # s = sigma*C/B
    trials: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    grad_mean: float | np.ndarray = 0.0   # per-coordinate mean, broadcast to dim
    grad_std: float | np.ndarray = 0.0    # per-coordinate std, broadcast to dim
    grad_family: str = "gaussian"         # or "student-t" (variance-matched)
    df: float = 5.0                       # Student-t dof; needs df > 2

    def __post_init__(self):
        if self.dim < 1 or self.steps < 1 or self.trials < 1:
            raise InvalidArgumentError("dim, steps, and trials must be >= 1")
        if self.noise_std < 0:
            raise InvalidArgumentError("noise_std must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise InvalidArgumentError("decay coefficients must lie in [0, 1)")
        if self.grad_family not in ("gaussian", "student-t"):
            raise InvalidArgumentError(f"unknown gradient family: {self.grad_family!r}")
        if self.grad_family == "student-t" and self.df <= 2:
            raise InvalidArgumentError("student-t family needs df > 2 for finite variance")
        if np.any(np.asarray(self.grad_std, dtype=float) < 0):
            raise InvalidArgumentError("grad_std must be >= 0")

    @property
    def phi(self) -> float:
        """Expected second-moment shift (1 - beta2^steps) * noise_std^2."""
        return noise_bias(self.noise_std, self.beta2, self.steps)


@dataclass
class MomentTrace:
    """Final-step EMA snapshots, shape (trials, dim) each."""

    config: MomentSimConfig
    m_clean: np.ndarray
    v_clean: np.ndarray
    m_private: np.ndarray
    v_private: np.ndarray


@dataclass
class FirstMomentReport:
    """Per-coordinate comparison of E[m_private] and E[m_clean]."""

    diffs: np.ndarray            # mean over trials of (m_private - m_clean), per coordinate
    std_errors: np.ndarray       # Monte-Carlo SE of each diff
    max_abs_diff: float
    frac_within_3se: float
    tol: float
    status: str                  # "ok" or "underpowered"
    passed: bool


@dataclass
class SecondMomentReport:
    """Aggregate shift E[v_private] - E[v_clean] against the predicted bias."""

    shift: float
    phi: float
    rel_error: float
    std_error: float
    tol: float
    status: str
    passed: bool


@dataclass
class UpdateDistributions:
    """Fig.2(Right)-style update distributions plus Table-1-style v stats.

    All three updates use the clean numerator m_clean; only the denominator
    changes: sqrt(v_clean), sqrt(v_private), sqrt(max(v_private - phi,
    gamma_prime)). Set ``use_private_numerator`` in the builder to use
    m_private instead.
    """

    updates_clean: np.ndarray
    updates_biased: np.ndarray
    updates_corrected: np.ndarray
    hist_clean: Histogram
    hist_biased: Histogram
    hist_corrected: Histogram
    stats_v_clean: SummaryStats
    stats_v_private: SummaryStats
    stats_v_corrected: SummaryStats
    gamma_prime: float
    phi: float


def _draw_block(gen: np.random.Generator, cfg: MomentSimConfig, width: int) -> np.ndarray:
    """One trial's gradient draws for ``width`` steps, shape (width, dim)."""
    if cfg.grad_family == "gaussian":
        raw = gen.standard_normal((width, cfg.dim))
    else:
        # scale Student-t to unit variance so grad_std keeps its meaning
        raw = gen.standard_t(cfg.df, size=(width, cfg.dim)) * np.sqrt((cfg.df - 2) / cfg.df)
    return np.asarray(cfg.grad_mean, dtype=float) + np.asarray(cfg.grad_std, dtype=float) * raw


def simulate_moments(cfg: MomentSimConfig) -> MomentTrace:
    """Run the clean and private EMA recursions on shared gradient draws.

    With noise_std == 0 the private track is computed from literally the
    same values, so it equals the clean track exactly.
    """
    shape = (cfg.trials, cfg.dim)
    m_c = np.zeros(shape); v_c = np.zeros(shape)
    m_p = np.zeros(shape); v_p = np.zeros(shape)
    b1, b2, s = cfg.beta1, cfg.beta2, cfg.noise_std
    mu = np.broadcast_to(np.asarray(cfg.grad_mean, dtype=float), (cfg.dim,))
    stochastic = bool(np.any(np.asarray(cfg.grad_std, dtype=float) > 0))
    gens = [rng_stream(cfg.seed, stream_key(DOMAIN_TRIAL, k)) for k in range(cfg.trials)]

    done = 0
    while done < cfg.steps:
        width = min(_CHUNK_STEPS, cfg.steps - done)
        if stochastic:
            g_block = np.stack([_draw_block(g, cfg, width) for g in gens], axis=1)
        if s > 0:
            z_block = s * np.stack(
                [g.standard_normal((width, cfg.dim)) for g in gens], axis=1)
        for j in range(width):
            g = g_block[j] if stochastic else np.broadcast_to(mu, shape)
            m_c = b1 * m_c + (1 - b1) * g
            v_c = b2 * v_c + (1 - b2) * g * g
            gp = g + z_block[j] if s > 0 else g
            m_p = b1 * m_p + (1 - b1) * gp
            v_p = b2 * v_p + (1 - b2) * gp * gp
        done += width

    return MomentTrace(config=cfg, m_clean=m_c, v_clean=v_c,
                       m_private=m_p, v_private=v_p)


def verify_first_moment(trace: MomentTrace, tol: float) -> FirstMomentReport:
    """Check that DP noise left the first-moment EMA unbiased.

    Per coordinate, the mean over trials of (m_private - m_clean) must stay
    below ``tol``; the report also carries Monte-Carlo standard errors so
    callers can apply a 3-sigma criterion instead. A configuration whose
    standard error is not below tol/3 is reported as "underpowered", which
    is not a pass.
    """
    diff = trace.m_private - trace.m_clean
    trials = diff.shape[0]
    mean_diff = diff.mean(axis=0)
    if trials > 1:
        se = diff.std(axis=0, ddof=1) / np.sqrt(trials)
    else:
        se = np.where(np.all(diff == 0, axis=0), 0.0, np.inf)
    max_abs = float(np.abs(mean_diff).max())
    with np.errstate(invalid="ignore"):
        within = np.abs(mean_diff) <= 3.0 * se
    within |= (mean_diff == 0)  # exact-zero diffs pass regardless of SE
    frac = float(np.mean(within))
    powered = bool(np.all(se < tol / 3.0))
    status = "ok" if powered else "underpowered"
    return FirstMomentReport(
        diffs=mean_diff, std_errors=se, max_abs_diff=max_abs,
        frac_within_3se=frac, tol=tol, status=status,
        passed=powered and max_abs < tol,
    )


def verify_second_moment(trace: MomentTrace, rel_tol: float = 0.02) -> SecondMomentReport:
    """Check E[v_private] - E[v_clean] against the predicted shift.

    This is the central correctness check of the toolkit: the measured shift
    must match (1 - beta2^t) * s^2 within ``rel_tol`` relative. The mean is
    taken over every chain (all trials and coordinates).
    """
    cfg = trace.config
    diff = (trace.v_private - trace.v_clean).ravel()
    shift = float(diff.mean())
    phi = cfg.phi
    n = diff.size
    se = float(diff.std(ddof=1) / np.sqrt(n)) if n > 1 else (0.0 if shift == phi else np.inf)
    if phi == 0.0:
        # noiseless: the shift must be exactly zero
        passed = shift == 0.0
        return SecondMomentReport(shift=shift, phi=0.0, rel_error=abs(shift),
                                  std_error=se, tol=rel_tol,
                                  status="ok", passed=passed)
    rel = abs(shift - phi) / phi
    powered = 3.0 * se < rel_tol * phi
    status = "ok" if powered else "underpowered"
    return SecondMomentReport(shift=shift, phi=phi, rel_error=rel, std_error=se,
                              tol=rel_tol, status=status,
                              passed=powered and rel <= rel_tol)


def log_edges(values: np.ndarray, bins_per_decade: int = V_BINS_PER_DECADE) -> np.ndarray:
    """Data-driven log10 bin edges covering the positive part of ``values``."""
    pos = values[values > 0]
    if pos.size == 0:
        return np.array([1e-30, 1.0])
    lo = np.floor(np.log10(pos.min()))
    hi = np.ceil(np.log10(pos.max()))
    n = max(int((hi - lo) * bins_per_decade), 1)
    return np.logspace(lo, hi, n + 1)


def update_distributions(trace: MomentTrace, gamma_prime: float,
                         use_private_numerator: bool = False) -> UpdateDistributions:
    """Build the clean / biased / corrected update distributions.

    The corrected denominator subtracts the accumulated bias phi from
    v_private and floors the difference at ``gamma_prime`` (which must be
    positive, since v_private - phi is frequently negative).
    """
    if gamma_prime <= 0:
        raise InvalidArgumentError("gamma_prime must be positive")
    cfg = trace.config
    phi = cfg.phi
    num = (trace.m_private if use_private_numerator else trace.m_clean).ravel()
    v_c = trace.v_clean.ravel()
    v_p = trace.v_private.ravel()

    with np.errstate(divide="ignore", invalid="ignore"):
        upd_clean = num / np.sqrt(v_c)
    upd_biased = num / np.sqrt(v_p)
    corrected_denom = np.sqrt(np.maximum(v_p - phi, gamma_prime))
    upd_corrected = num / corrected_denom

    edges = np.linspace(*UPDATE_BIN_RANGE, UPDATE_BIN_COUNT + 1)
    v_corrected = v_p - phi
    return UpdateDistributions(
        updates_clean=upd_clean,
        updates_biased=upd_biased,
        updates_corrected=upd_corrected,
        hist_clean=histogram(upd_clean, edges),
        hist_biased=histogram(upd_biased, edges),
        hist_corrected=histogram(upd_corrected, edges),
        stats_v_clean=summarize(v_c),
        stats_v_private=summarize(v_p),
        stats_v_corrected=summarize(v_corrected),
        gamma_prime=gamma_prime,
        phi=phi,
    )


def mass_within(values: np.ndarray, bound: float) -> float:
    """Fraction of samples with |value| < bound."""
    return float(np.mean(np.abs(values) < bound))
