"""Gaussian-mechanism privacy: gradient clipping, noising and RDP accounting.

The accountant tracks Renyi-DP of the sampled Gaussian mechanism (Poisson
subsampling at rate ``q``, noise multiplier ``sigma``) over a fixed grid of
orders, composes additively, and converts to (epsilon, delta) with the
classic ``rdp + log(1/delta) / (alpha - 1)`` bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from dploc.errors import BudgetExhausted, CalibrationError, ConfigError, ContractViolation, SchemaError

DEFAULT_ORDERS: tuple[float, ...] = (1.25, 1.5, 1.75, 2.0, 2.5) + tuple(float(a) for a in range(3, 65)) + (128.0, 256.0)
DEFAULT_DELTA = 1e-5
DEFAULT_CLIP_NORM = 1.0


@dataclass
class PrivacySpec:
    epsilon: float
    delta: float = DEFAULT_DELTA
    clip_norm: float = DEFAULT_CLIP_NORM
    noise_multiplier: float | None = None  # calibrated when None
    sampling_rate: float = 1.0
    steps: int = 1

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not self.clip_norm > 0:
            raise ConfigError("clip norm must be positive")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ConfigError("noise multiplier must be non-negative")
        if not 0 < self.sampling_rate <= 1:
            raise ConfigError("sampling rate must lie in (0, 1]")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")


# --- clipping and noising -------------------------------------------------


def clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``g`` onto the L2 ball of radius ``clip_norm`` (no-op inside it)."""
    if not clip_norm > 0:
        raise ConfigError("clip norm must be positive")
    g = np.asarray(g, dtype=np.float64)
    return clip_rows(g.reshape(1, -1), clip_norm)[0].reshape(g.shape)


def clip_rows(grads: np.ndarray, clip_norm: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip every row of an (m, d) gradient matrix; returns (clipped, raw norms).

    Rows already inside the ball are returned untouched, bit for bit.
    """
    norms = np.linalg.norm(grads, axis=1)
    factors = clip_factors(norms, clip_norm)
    out = grads.copy()
    over = factors < 1.0
    out[over] *= factors[over, None]
    return out, norms


def clip_factors(norms: np.ndarray, clip_norm: float) -> np.ndarray:
    """Per-example scale ``min(1, c / norm)``; exactly 1.0 inside the ball.

    Shrunk by a few ulps when active so the scaled norm never rounds above ``c``.
    """
    if not clip_norm > 0:
        raise ConfigError("clip norm must be positive")
    norms = np.asarray(norms, dtype=np.float64)
    out = np.ones_like(norms)
    over = norms > clip_norm
    out[over] = clip_norm / norms[over] * (1.0 - 1e-12)
    return out


def add_noise(total: np.ndarray, noise_multiplier: float, clip_norm: float, rng: np.random.Generator) -> np.ndarray:
    """``total + N(0, (sigma * c)^2 I)``; a no-op (no draw) when sigma is 0."""
    if noise_multiplier > 0:
        return total + rng.normal(0.0, noise_multiplier * clip_norm, size=total.shape)
    return total


def noisy_mean(grads: np.ndarray, noise_multiplier: float, clip_norm: float, rng: np.random.Generator) -> np.ndarray:
    """``(sum_i g_i + N(0, (sigma * c)^2 I)) / m`` over rows of clipped gradients."""
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    m = grads.shape[0]
    if m < 1:
        raise ContractViolation("noisy_mean needs at least one gradient")
    norms = np.linalg.norm(grads, axis=1)
    if np.any(norms > clip_norm + 1e-9):
        bad = int(np.argmax(norms))
        raise ContractViolation(f"gradient {bad} has norm {norms[bad]:.6g} > clip norm {clip_norm}")
    return add_noise(grads.sum(axis=0), noise_multiplier, clip_norm, rng) / m


def gaussian_sigma_bound(epsilon: float, delta: float) -> float:
    """Classic single-release Gaussian-mechanism noise scale (valid for epsilon < 1)."""
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if not 0 < epsilon < 1:
        raise ConfigError("the classic Gaussian bound only holds for 0 < epsilon < 1")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


# --- RDP of the sampled Gaussian mechanism --------------------------------


def _log_add(a: float, b: float) -> float:
    lo, hi = min(a, b), max(a, b)
    if lo == -math.inf:
        return hi
    return hi + math.log1p(math.exp(lo - hi))


def _log_sub(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a >= b."""
    if b == -math.inf:
        return a
    if a <= b:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _log_erfc(x: float) -> float:
    return math.log(2.0) + special.log_ndtr(-x * math.sqrt(2.0))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    i = np.arange(alpha + 1, dtype=np.float64)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(i + 1) - special.gammaln(alpha - i + 1)
    terms = log_binom + i * math.log(q) + (alpha - i) * math.log1p(-q) + (i * i - i) / (2.0 * sigma**2)
    return float(special.logsumexp(terms))


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    # two-sided series; see Mironov, Talwar & Zhang (2019) for the derivation
    log_a0 = log_a1 = -math.inf
    z0 = sigma**2 * math.log(1.0 / q - 1.0) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2.0) * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2.0) * sigma))
        log_s0 = log_t0 + (i * i - i) / (2.0 * sigma**2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * sigma**2) + log_e1
        if coef > 0:
            log_a0 = _log_add(log_a0, log_s0)
            log_a1 = _log_add(log_a1, log_s1)
        else:
            log_a0 = _log_sub(log_a0, log_s0)
            log_a1 = _log_sub(log_a1, log_s1)
        i += 1
        if max(log_s0, log_s1) < -30 or i > 10_000:
            break
    return _log_add(log_a0, log_a1)


def _rdp_one(q: float, sigma: float, alpha: float) -> float:
    full = alpha / (2.0 * sigma**2)
    if q == 1.0:
        return full
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, alpha)
    return min(max(log_a / (alpha - 1.0), 0.0), full)


def rdp_gaussian(noise_multiplier: float, sampling_rate: float, orders: Sequence[float] = DEFAULT_ORDERS) -> np.ndarray:
    """Per-step RDP of the (subsampled) Gaussian mechanism at each order."""
    if not noise_multiplier > 0:
        raise ConfigError("noise multiplier must be positive for accounting")
    if not 0 < sampling_rate <= 1:
        raise ConfigError("sampling rate must lie in (0, 1]")
    orders = np.asarray(orders, dtype=np.float64)
    if np.any(orders <= 1):
        raise ConfigError("RDP orders must exceed 1")
    return np.array([_rdp_one(sampling_rate, noise_multiplier, float(a)) for a in orders])


# --- accountant ------------------------------------------------------------


@dataclass
class AccountantState:
    """Composed RDP per order.

    Each distinct per-step curve is stored with its step count, and totals are
    ``base + sum(count * curve)``; composing ``a`` then ``b`` steps of one
    mechanism is therefore bitwise equal to composing ``a + b`` at once.
    """

    orders: np.ndarray = field(default_factory=lambda: np.asarray(DEFAULT_ORDERS))
    base: np.ndarray | None = None
    steps_recorded: int = 0
    terms: list[tuple[np.ndarray, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.orders = np.asarray(self.orders, dtype=np.float64)
        if np.any(self.orders <= 1) or np.any(np.diff(self.orders) <= 0):
            raise ConfigError("orders must be strictly ascending and > 1")
        self.base = np.zeros_like(self.orders) if self.base is None else np.asarray(self.base, dtype=np.float64)

    @property
    def rdp_totals(self) -> np.ndarray:
        total = self.base.copy()
        for curve, count in self.terms:
            total = total + count * curve
        return total

    def copy(self) -> "AccountantState":
        return AccountantState(self.orders.copy(), self.base.copy(), self.steps_recorded, list(self.terms))


def compose(state: AccountantState, step_rdp: np.ndarray, n_steps: int = 1) -> AccountantState:
    """Return a new state with ``n_steps`` more steps of ``step_rdp`` composed in."""
    step_rdp = np.asarray(step_rdp, dtype=np.float64)
    if step_rdp.shape != state.orders.shape:
        raise SchemaError(f"step RDP has {step_rdp.size} orders, accountant tracks {state.orders.size}")
    if n_steps < 0:
        raise ConfigError("n_steps must be non-negative")
    terms = list(state.terms)
    if n_steps:
        for i, (curve, count) in enumerate(terms):
            if np.array_equal(curve, step_rdp):
                terms[i] = (curve, count + n_steps)
                break
        else:
            terms.append((step_rdp.copy(), n_steps))
    return AccountantState(state.orders.copy(), state.base.copy(), state.steps_recorded + n_steps, terms)


def rdp_to_eps(state: AccountantState, delta: float) -> tuple[float, float]:
    """(epsilon, best order) for the composed RDP curve at ``delta``."""
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    eps = state.rdp_totals + math.log(1.0 / delta) / (state.orders - 1.0)
    k = int(np.argmin(eps))
    return float(eps[k]), float(state.orders[k])


def epsilon_for(noise_multiplier: float, sampling_rate: float, steps: int, delta: float,
                orders: Sequence[float] = DEFAULT_ORDERS) -> float:
    state = compose(AccountantState(np.asarray(orders)), rdp_gaussian(noise_multiplier, sampling_rate, orders), steps)
    return rdp_to_eps(state, delta)[0]


def calibrate_noise(target_epsilon: float, delta: float, sampling_rate: float, steps: int,
                    orders: Sequence[float] = DEFAULT_ORDERS, lo: float = 0.05, hi: float = 500.0,
                    rel_tol: float = 0.005, max_iter: int = 100) -> float:
    """Smallest noise multiplier (to bisection precision) whose accounted epsilon <= target."""
    if not target_epsilon > 0:
        raise ConfigError("target epsilon must be positive")
    PrivacySpec(target_epsilon, delta, sampling_rate=sampling_rate, steps=steps)

    def eps(s: float) -> float:
        return epsilon_for(s, sampling_rate, steps, delta, orders)

    if eps(hi) > target_epsilon:
        raise CalibrationError(
            f"epsilon {target_epsilon} unreachable: sigma={hi} still gives {eps(hi):.4g} "
            f"(q={sampling_rate}, T={steps}, delta={delta})"
        )
    if eps(lo) <= target_epsilon:
        return lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if eps(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
        if eps(hi) >= (1.0 - rel_tol) * target_epsilon:
            break
    got = eps(hi)
    if got > target_epsilon:
        raise CalibrationError(f"calibration re-check failed: {got} > {target_epsilon}")
    return hi


class PrivacyAccountant:
    """Running accountant for one training run; ticks once per noised critic step."""

    def __init__(self, noise_multiplier: float, sampling_rate: float, delta: float,
                 target_epsilon: float | None = None, orders: Sequence[float] = DEFAULT_ORDERS):
        self.noise_multiplier = noise_multiplier
        self.sampling_rate = sampling_rate
        self.delta = delta
        self.target_epsilon = target_epsilon
        self.state = AccountantState(np.asarray(orders, dtype=np.float64))
        self.step_rdp = rdp_gaussian(noise_multiplier, sampling_rate, orders)
        self.trace: list[tuple[int, float, float]] = []

    def epsilon(self) -> float:
        if self.state.steps_recorded == 0:
            return 0.0
        return rdp_to_eps(self.state, self.delta)[0]

    def would_exceed(self) -> bool:
        if self.target_epsilon is None:
            return False
        eps, _ = rdp_to_eps(compose(self.state, self.step_rdp, 1), self.delta)
        return eps > self.target_epsilon

    def step(self) -> float:
        if self.would_exceed():
            raise BudgetExhausted(
                f"next step would exceed epsilon={self.target_epsilon} after {self.state.steps_recorded} steps"
            )
        self.state = compose(self.state, self.step_rdp, 1)
        eps, order = rdp_to_eps(self.state, self.delta)
        self.trace.append((self.state.steps_recorded, order, eps))
        return eps


def write_trace_csv(path, trace: Iterable[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "best_order", "epsilon_at_delta"])
        for step, order, eps in trace:
            w.writerow([step, repr(float(order)), repr(float(eps))])
