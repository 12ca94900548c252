"""SGD and Adam update rules, including the noise-bias-corrected Adam variant.

Three Adam modes:

* ``standard``     delta = m_hat / (sqrt(v_hat) + gamma), gamma outside the root
* ``dp-biased``    the same rule applied to privatized gradients, uncorrected
* ``dp-corrected`` delta = m_hat / sqrt(max(v_hat - (sigma*C/B)^2, gamma_prime))

The corrected rule subtracts the DP noise variance (sigma*C/B)^2 from the
bias-corrected second moment v_hat; after the 1/(1-beta2^t) division this is
the same quantity as subtracting the accumulated bias
phi = (1-beta2^t)(sigma*C/B)^2 from v. Only the v_hat form is implemented to
rule out double correction. The gamma_prime floor sits inside the square
root, deliberately on a separate code path from the standard gamma.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .privatizer import PrivacyConfig, noise_std

ADAM_MODES = ("standard", "dp-biased", "dp-corrected")

_MAX_STEP = 2**62  # beta**t underflows long before this; guards t overflow

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 1e-3
    gamma: float = 1e-8          # standard/biased stability constant, outside the root
    gamma_prime: float = 1e-8    # corrected-mode floor, inside the root
    mode: str = "standard"

    def __post_init__(self):
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise InvalidArgumentError("decay coefficients must lie in [0, 1)")
        if self.lr <= 0:
            raise InvalidArgumentError("learning rate must be positive")
        if self.gamma < 0:
            raise InvalidArgumentError("gamma must be >= 0")
        if self.mode not in ADAM_MODES:
            raise InvalidArgumentError(f"unknown mode: {self.mode!r}")
        if self.mode == "dp-corrected" and self.gamma_prime <= 0:
            raise InvalidArgumentError("dp-corrected mode needs gamma_prime > 0")


@dataclass
class OptimizerState:
    """Step counter plus moment EMAs and parameters; single-owner per run."""

    t: int
    m: np.ndarray
    v: np.ndarray
    theta: np.ndarray


@dataclass
class UpdateDirection:
    """Computed update direction plus the moments that produced it."""

    delta: np.ndarray
    m_hat: np.ndarray
    v_hat: np.ndarray
    floored_count: int = 0


def init_state(theta0: np.ndarray) -> OptimizerState:
    """Fresh state at t=0 with zeroed moments (m_0 = v_0 = 0)."""
    theta0 = np.asarray(theta0, dtype=float)
    return OptimizerState(t=0, m=np.zeros_like(theta0), v=np.zeros_like(theta0),
                          theta=theta0.copy())


def _check_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")


def sgd_step(state: OptimizerState, g: np.ndarray, lr: float) -> OptimizerState:
    """theta <- theta - lr * g; moments untouched."""
    g = np.asarray(g, dtype=float)
    _check_shape(state.theta, g)
    return OptimizerState(t=state.t + 1, m=state.m, v=state.v,
                          theta=state.theta - lr * g)


def adam_moments(state: OptimizerState, g: np.ndarray, cfg: AdamConfig):
    """Advance the moment EMAs by one gradient and return bias-corrected moments.

    Returns ``(new_state, m_hat, v_hat)`` with t incremented; theta is not
    touched here (see :func:`apply_update`).
    """
    g = np.asarray(g, dtype=float)
    _check_shape(state.m, g)
    if state.t >= _MAX_STEP:
        raise InvalidArgumentError("step counter overflow")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    return OptimizerState(t=t, m=m, v=v, theta=state.theta), m_hat, v_hat


def update_standard(m_hat: np.ndarray, v_hat: np.ndarray, gamma: float) -> UpdateDirection:
    """Standard Adam direction m_hat / (sqrt(v_hat) + gamma)."""
    m_hat = np.asarray(m_hat, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    _check_shape(m_hat, v_hat)
    if np.any(v_hat < 0):
        raise InvalidArgumentError("v_hat must be elementwise nonnegative")
    delta = m_hat / (np.sqrt(v_hat) + gamma)
    return UpdateDirection(delta=delta, m_hat=m_hat, v_hat=v_hat, floored_count=0)


def noise_bias(s: float, beta2: float, t: int) -> float:
    """Accumulated DP-noise bias in v_t: (1 - beta2^t) * s^2 for s = sigma*C/B."""
    if t < 1:
        raise InvalidArgumentError("t must be >= 1")
    return (1.0 - beta2 ** t) * s * s


def compute_phi(cfg: PrivacyConfig, beta2: float, t: int) -> float:
    """Bias that DP noise adds to the raw second-moment EMA after t steps.

    The companion constant subtracted from v_hat by the corrected update is
    ``noise_std(cfg)**2``, i.e. this value divided by (1 - beta2^t).
    """
    return noise_bias(noise_std(cfg), beta2, t)


def update_corrected(m_hat: np.ndarray, v_hat: np.ndarray, cfg: PrivacyConfig,
                     gamma_prime: float,
                     noise_var_override: float | None = None) -> UpdateDirection:
    """Bias-corrected direction m_hat / sqrt(max(v_hat - (sigma*C/B)^2, gamma_prime)).

    ``noise_var_override`` substitutes a different subtracted constant (the
    fake-correction sweep); by default the true noise variance is used.
    ``floored_count`` reports how many coordinates the gamma_prime floor
    absorbed, which is common since v_hat - noise_var is frequently near or
    below zero.
    """
    if gamma_prime <= 0:
        raise InvalidArgumentError("gamma_prime must be positive")
    m_hat = np.asarray(m_hat, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    _check_shape(m_hat, v_hat)
    c = noise_std(cfg) ** 2 if noise_var_override is None else float(noise_var_override)
    gap = v_hat - c
    floored = gap < gamma_prime
    delta = m_hat / np.sqrt(np.maximum(gap, gamma_prime))
    return UpdateDirection(delta=delta, m_hat=m_hat, v_hat=v_hat,
                           floored_count=int(np.count_nonzero(floored)))


def apply_update(state: OptimizerState, update: UpdateDirection, lr: float) -> OptimizerState:
    """theta <- theta - lr * delta; counter and moments already advanced."""
    _check_shape(state.theta, update.delta)
    return OptimizerState(t=state.t, m=state.m, v=state.v,
                          theta=state.theta - lr * update.delta)


def save_state(state: OptimizerState, path) -> None:
    """Checkpoint (t, m, v, theta) as versioned JSON with hex floats (bit-exact)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "t": state.t,
        "m": [x.hex() for x in state.m.tolist()],
        "v": [x.hex() for x in state.v.tolist()],
        "theta": [x.hex() for x in state.theta.tolist()],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_state(path) -> OptimizerState:
    """Inverse of :func:`save_state`; round-trips bit-for-bit."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version: {payload.get('version')}")
    fromhex = float.fromhex
    return OptimizerState(
        t=int(payload["t"]),
        m=np.array([fromhex(x) for x in payload["m"]]),
        v=np.array([fromhex(x) for x in payload["v"]]),
        theta=np.array([fromhex(x) for x in payload["theta"]]),
    )
