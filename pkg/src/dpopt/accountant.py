"""Renyi-DP accounting for the (Poisson-subsampled) Gaussian mechanism.

Per-order Renyi divergences compose additively across steps; the ledger
tracks totals on a fixed order grid and converts to (epsilon, delta) via

    epsilon = min_alpha [ rdp(alpha) + log(1/delta) / (alpha - 1) ].

Subsampled values use the exact integer-order binomial-sum formula for the
sampled Gaussian mechanism, evaluated entirely in log space (log-sum-exp),
which stays stable down to sampling rates around 1e-6. The default grid is
the integers 2..64 plus a coarse tail up to 512; fractional orders are valid
for the plain Gaussian mechanism only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .privatizer import PrivacyConfig

LEDGER_FORMAT_VERSION = 1

DEFAULT_ORDERS = np.array(
    list(range(2, 65)) + [72, 80, 96, 128, 160, 192, 256, 320, 384, 448, 512],
    dtype=float,
)


@dataclass
class RdpLedger:
    """Accumulated per-order Renyi divergence over composed invocations."""

    orders: np.ndarray
    totals: np.ndarray
    steps: int = 0

    def __post_init__(self):
        self.orders = np.asarray(self.orders, dtype=float)
        self.totals = np.asarray(self.totals, dtype=float)
        if self.orders.size == 0:
            raise InvalidArgumentError("order grid must be nonempty")
        if np.any(self.orders <= 1):
            raise InvalidArgumentError("all orders must exceed 1")
        if np.any(np.diff(self.orders) <= 0):
            raise InvalidArgumentError("orders must be strictly increasing")
        if self.totals.shape != self.orders.shape:
            raise InvalidArgumentError("totals must align with orders")
        if np.any(self.totals < 0):
            raise InvalidArgumentError("totals must be nonnegative")


@dataclass(frozen=True)
class PrivacySpend:
    epsilon: float
    delta: float
    best_order: float


def new_ledger(orders=None) -> RdpLedger:
    orders = DEFAULT_ORDERS if orders is None else np.asarray(orders, dtype=float)
    return RdpLedger(orders=orders, totals=np.zeros_like(orders), steps=0)


def rdp_gaussian(alpha: float, sigma: float) -> float:
    """RDP of the unsubsampled Gaussian mechanism at sensitivity 1: alpha / (2 sigma^2)."""
    if alpha <= 1:
        raise InvalidArgumentError("alpha must exceed 1")
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    return alpha / (2.0 * sigma * sigma)


def _log_add(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    hi, lo = (a, b) if a > b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def rdp_subsampled_gaussian(alpha: int, sigma: float, q: float) -> float:
    """RDP of the Poisson-subsampled Gaussian mechanism at integer order alpha.

    Binomial-sum formula, log-stable:

      log A = logsumexp_{i=0..alpha} [ log C(alpha,i) + i log q
                                       + (alpha-i) log(1-q) + i(i-1)/(2 sigma^2) ]
      rdp   = log A / (alpha - 1)

    At q=1 this reduces exactly to the plain Gaussian value.
    """
    if int(alpha) != alpha or alpha < 2:
        raise InvalidArgumentError("alpha must be an integer >= 2")
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    if not 0 < q <= 1:
        raise InvalidArgumentError("sampling rate must lie in (0, 1]")
    alpha = int(alpha)
    if q == 1.0:
        return rdp_gaussian(alpha, sigma)

    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    lg = math.lgamma
    log_a = -math.inf
    for i in range(alpha + 1):
        log_binom = lg(alpha + 1) - lg(i + 1) - lg(alpha - i + 1)
        term = log_binom + i * log_q + (alpha - i) * log_1mq + i * (i - 1) / (2.0 * sigma * sigma)
        log_a = _log_add(log_a, term)
    # A >= 1 analytically; clamp round-off so composed totals stay nonnegative
    return max(log_a, 0.0) / (alpha - 1)


def per_step_rdp(cfg: PrivacyConfig, orders=None) -> np.ndarray:
    """Per-order RDP cost of one subsampled-Gaussian training step."""
    orders = DEFAULT_ORDERS if orders is None else np.asarray(orders, dtype=float)
    q = cfg.sampling_rate
    sigma = cfg.noise_multiplier
    return np.array([rdp_subsampled_gaussian(int(a), sigma, q) for a in orders])


def compose(ledger: RdpLedger, per_step: np.ndarray, steps: int) -> RdpLedger:
    """Add ``steps`` invocations at ``per_step`` cost; returns a new ledger."""
    per_step = np.asarray(per_step, dtype=float)
    if per_step.shape != ledger.orders.shape:
        raise InvalidArgumentError("per-step grid does not match the ledger's orders")
    if steps < 0:
        raise InvalidArgumentError("steps must be >= 0")
    return RdpLedger(orders=ledger.orders.copy(),
                     totals=ledger.totals + steps * per_step,
                     steps=ledger.steps + steps)


def to_epsilon(ledger: RdpLedger, delta: float) -> PrivacySpend:
    """Standard RDP -> (epsilon, delta) conversion, minimized over the grid."""
    if not 0 < delta < 1:
        raise InvalidArgumentError("delta must lie in (0, 1)")
    eps = ledger.totals + math.log(1.0 / delta) / (ledger.orders - 1.0)
    idx = int(np.argmin(eps))
    return PrivacySpend(epsilon=float(eps[idx]), delta=delta,
                        best_order=float(ledger.orders[idx]))


def max_steps(cfg: PrivacyConfig, orders=None) -> int:
    """Largest step count whose composed spend stays within epsilon_target.

    Exponential-then-binary search over T, using monotonicity of epsilon in
    T. Returns 0 when even a single step exceeds the budget (the caller's
    budget-exhausted signal).
    """
    if cfg.epsilon_target is None or cfg.epsilon_target <= 0:
        raise InvalidArgumentError("max_steps needs a positive epsilon_target")
    if cfg.noise_multiplier <= 0:
        raise InvalidArgumentError("max_steps needs a positive noise multiplier")
    orders = DEFAULT_ORDERS if orders is None else np.asarray(orders, dtype=float)
    per = per_step_rdp(cfg, orders)
    log_term = math.log(1.0 / cfg.delta) / (orders - 1.0)

    def eps_at(steps: int) -> float:
        return float(np.min(steps * per + log_term))

    target = cfg.epsilon_target
    if eps_at(1) > target:
        return 0
    hi = 1
    while eps_at(hi) <= target:
        hi *= 2
        if hi > 2**62:
            raise InvalidArgumentError("epsilon never exhausted; check noise parameters")
    lo = hi // 2  # eps_at(lo) <= target < eps_at(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if eps_at(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


def ledger_to_text(ledger: RdpLedger) -> str:
    """Audit export: one order/total pair per line; round-trips exactly.

    Floats are written with ``repr`` (shortest round-trip form), so
    ``ledger_from_text(ledger_to_text(x)) == x`` bit-for-bit.
    """
    lines = [f"rdp-ledger v{LEDGER_FORMAT_VERSION}", f"steps {ledger.steps}"]
    for order, total in zip(ledger.orders.tolist(), ledger.totals.tolist()):
        lines.append(f"{order!r} {total!r}")
    return "\n".join(lines) + "\n"


def ledger_from_text(text: str) -> RdpLedger:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != f"rdp-ledger v{LEDGER_FORMAT_VERSION}":
        raise InvalidArgumentError("not a recognized ledger export")
    if not lines[1].startswith("steps "):
        raise InvalidArgumentError("ledger export missing steps line")
    steps = int(lines[1].split()[1])
    orders, totals = [], []
    for ln in lines[2:]:
        a, t = ln.split()
        orders.append(float(a))
        totals.append(float(t))
    return RdpLedger(orders=np.array(orders), totals=np.array(totals), steps=steps)
