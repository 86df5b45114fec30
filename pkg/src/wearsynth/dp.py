"""Differential privacy machinery: clip-and-noise aggregation, a Renyi
accountant for the Poisson-subsampled Gaussian mechanism, and noise
calibration.

The accountant follows the usual recipe: compute the Renyi divergence of the
subsampled Gaussian at a grid of orders, compose over steps by addition, and
convert to (epsilon, delta) taking the best order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import special

ACCOUNTANT_NAME = "rdp-grid-v1"

# Integer and half-integer orders plus a few small fractional ones.
DEFAULT_ORDERS: tuple[float, ...] = tuple(
    [1.25, 1.5, 1.75]
    + [float(a) for a in np.arange(2.0, 64.5, 0.5)]
    + [float(a) for a in range(65, 513)]
)

SIGMA_RANGE = (1e-2, 1e4)


class PrivacyError(Exception):
    """Base class for privacy-related failures."""


class GeometryError(PrivacyError, ValueError):
    pass


class CalibrationError(PrivacyError):
    pass


class CertificateError(PrivacyError):
    pass


class NonFiniteGradientError(PrivacyError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"per-example gradient {index} contains non-finite values")
        self.index = index


@dataclass
class PrivacySpec:
    epsilon_target: float
    delta: float = 1e-3
    clip_norm: float = 1.0
    sigma: float | None = None
    sample_rate: float | None = None
    steps: int | None = None

    def validate(self, n_unique: int | None = None) -> None:
        if not self.epsilon_target > 0:
            raise PrivacyError("epsilon_target must be positive")
        if not 0 < self.delta < 1:
            raise PrivacyError("delta must lie in (0, 1)")
        if not self.clip_norm > 0:
            raise PrivacyError("clip_norm must be positive")
        if n_unique is not None and self.delta > 1.0 / n_unique:
            raise PrivacyError(f"delta={self.delta} exceeds 1/n for n={n_unique}")

    @property
    def calibrated(self) -> bool:
        return self.sigma is not None and self.sample_rate is not None and self.steps is not None


@dataclass
class TrainingGeometry:
    n_unique: int
    batch: int
    epochs: int
    sliding_duplication: bool = False

    @property
    def effective_epochs(self) -> int:
        return 2 * self.epochs if self.sliding_duplication else self.epochs


@dataclass
class PrivacyCertificate:
    epsilon: float
    delta: float
    sigma: float
    q: float
    steps: int
    clip_norm: float
    accountant: str = ACCOUNTANT_NAME

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PrivacyCertificate":
        return cls(**d)

    def validate(self, epsilon_target: float | None = None, rtol: float = 1e-9) -> float:
        """Recompute epsilon from the recorded mechanism parameters.

        Raises CertificateError when the recorded epsilon disagrees with the
        accountant, or exceeds ``epsilon_target``.
        """
        eps = epsilon_for(self.sigma, self.q, self.steps, self.delta)
        if not math.isclose(eps, self.epsilon, rel_tol=rtol, abs_tol=1e-12):
            raise CertificateError(f"recorded epsilon {self.epsilon} != accountant {eps}")
        if epsilon_target is not None and eps > epsilon_target * (1 + rtol):
            raise CertificateError(f"epsilon {eps} exceeds target {epsilon_target}")
        return eps


# ---------------------------------------------------------------------------
# clip and noise


def clip_and_noise(per_example_grads: Sequence[np.ndarray], clip_norm: float, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Clip each gradient to L2 norm ``clip_norm``, sum, add N(0, (sigma*C)^2)
    noise per coordinate and average over the number of examples."""
    if len(per_example_grads) == 0:
        raise ValueError("need at least one per-example gradient")
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")

    total = None
    for i, g in enumerate(per_example_grads):
        g = np.asarray(g, dtype=np.float64).ravel()
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(i)
        norm = np.linalg.norm(g)
        factor = min(1.0, clip_norm / norm) if norm > 0 else 1.0
        clipped = g * factor
        total = clipped if total is None else total + clipped
    noise = rng.normal(0.0, sigma * clip_norm, size=total.shape)
    return (total + noise) / len(per_example_grads)


# ---------------------------------------------------------------------------
# Renyi accountant


def _log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _log_sub(a: float, b: float) -> float:
    # log(exp(a) - exp(b)), a >= b
    if b == -math.inf:
        return a
    if a == b:
        return -math.inf
    return a + math.log1p(-math.exp(b - a))


def _log_erfc(x: float) -> float:
    return float(np.log(2.0) + special.log_ndtr(-x * math.sqrt(2.0)))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    k = np.arange(alpha + 1, dtype=np.float64)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(k + 1) - special.gammaln(alpha - k + 1)
    with np.errstate(divide="ignore"):
        terms = (log_binom + k * math.log(q) + (alpha - k) * math.log1p(-q)
                 + (k * k - k) / (2.0 * sigma ** 2))
    return float(special.logsumexp(terms))


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    # Two-sided series split at z0 where the mixture densities cross.
    log_a0, log_a1 = -math.inf, -math.inf
    z0 = sigma ** 2 * math.log(1.0 / q - 1.0) + 0.5
    i = 0
    while True:
        coef = special.binom(alpha, i)
        log_coef = math.log(abs(coef))
        j = alpha - i
        log_t0 = log_coef + i * math.log(q) + j * math.log1p(-q)
        log_t1 = log_coef + j * math.log(q) + i * math.log1p(-q)
        log_e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2.0) * sigma))
        log_e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2.0) * sigma))
        log_s0 = log_t0 + (i * i - i) / (2.0 * sigma ** 2) + log_e0
        log_s1 = log_t1 + (j * j - j) / (2.0 * sigma ** 2) + log_e1
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


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: float) -> float:
    """Renyi divergence of order ``alpha`` for one step of the
    Poisson-subsampled Gaussian mechanism with noise multiplier ``sigma``."""
    if q == 0:
        return 0.0
    if q == 1.0:
        return alpha / (2.0 * sigma ** 2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, sigma, int(alpha))
    else:
        log_a = _log_a_frac(q, sigma, float(alpha))
    return log_a / (alpha - 1.0)


def rdp_to_epsilon(orders: Sequence[float], rdp: Sequence[float], delta: float) -> tuple[float, float]:
    """Convert per-order RDP values to (epsilon, best order).

    Uses the conversion eps = rdp + log((a-1)/a) - (log(delta) + log(a)) / (a-1),
    which is never worse than the classic rdp + log(1/delta)/(a-1).
    """
    orders = np.asarray(orders, dtype=np.float64)
    rdp = np.asarray(rdp, dtype=np.float64)
    eps = rdp + np.log1p(-1.0 / orders) - (math.log(delta) + np.log(orders)) / (orders - 1.0)
    eps = np.where(rdp < 0, np.inf, eps)
    idx = int(np.nanargmin(eps))
    return max(0.0, float(eps[idx])), float(orders[idx])


def privacy_spent(sigma: float, q: float, steps: int, delta: float,
                  orders: Sequence[float] = DEFAULT_ORDERS) -> tuple[float, float]:
    """(epsilon, optimal order) after ``steps`` subsampled Gaussian releases."""
    if steps == 0:
        return 0.0, float("nan")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rdp = [steps * rdp_subsampled_gaussian(q, sigma, a) for a in orders]
    return rdp_to_epsilon(orders, rdp, delta)


def epsilon_for(sigma: float, q: float, steps: int, delta: float,
                orders: Sequence[float] = DEFAULT_ORDERS) -> float:
    return privacy_spent(sigma, q, steps, delta, orders)[0]


def calibrate_sigma(epsilon_target: float, delta: float, q: float, steps: int,
                    rtol: float = 1e-3, sigma_range: tuple[float, float] = SIGMA_RANGE) -> float:
    """Smallest noise multiplier (to ``rtol`` relative) meeting ``epsilon_target``."""
    if not epsilon_target > 0 or math.isinf(epsilon_target):
        raise CalibrationError("epsilon_target must be finite and positive")
    lo, hi = sigma_range
    if epsilon_for(hi, q, steps, delta) > epsilon_target:
        raise CalibrationError(f"epsilon {epsilon_target} unreachable with sigma <= {hi}")
    if epsilon_for(lo, q, steps, delta) <= epsilon_target:
        return lo
    # bracket first so the bisection runs over a narrow interval
    hi_b = lo
    while True:
        nxt = hi_b * 2.0
        if nxt >= hi or epsilon_for(nxt, q, steps, delta) <= epsilon_target:
            lo, hi = hi_b, min(nxt, hi)
            break
        hi_b = nxt
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        if epsilon_for(mid, q, steps, delta) <= epsilon_target:
            hi = mid
        else:
            lo = mid
    return hi


def geometry_for(n_unique: int, batch: int, epochs: int, sliding_duplication: bool = False) -> tuple[float, int]:
    """Sampling rate and step count; the sliding-window rule doubles epochs."""
    if batch < 1 or n_unique < 1:
        raise GeometryError("n_unique and batch must be >= 1")
    if batch > n_unique:
        raise GeometryError(f"batch {batch} larger than n_unique {n_unique}")
    geo = TrainingGeometry(n_unique, batch, epochs, sliding_duplication)
    q = batch / n_unique
    steps = geo.effective_epochs * math.ceil(n_unique / batch)
    return q, steps


def certify(spec: PrivacySpec, n_unique: int, batch: int, epochs: int,
            sliding_duplication: bool = False) -> PrivacySpec:
    """Fill in sigma/q/steps on a copy of ``spec`` for the given geometry."""
    spec.validate(n_unique)
    q, steps = geometry_for(n_unique, batch, epochs, sliding_duplication)
    sigma = calibrate_sigma(spec.epsilon_target, spec.delta, q, steps)
    return PrivacySpec(spec.epsilon_target, spec.delta, spec.clip_norm, sigma, q, steps)


def certificate_for(spec: PrivacySpec) -> PrivacyCertificate:
    if not spec.calibrated:
        raise CalibrationError("privacy spec has no calibrated sigma")
    eps = epsilon_for(spec.sigma, spec.sample_rate, spec.steps, spec.delta)
    if eps > spec.epsilon_target * (1 + 1e-9):
        raise CertificateError(f"epsilon {eps} exceeds target {spec.epsilon_target}")
    return PrivacyCertificate(eps, spec.delta, spec.sigma, spec.sample_rate, spec.steps, spec.clip_norm)
