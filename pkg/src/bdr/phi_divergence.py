"""Worst-case expectation over a KL ball on a fixed finite support.

For the linear objective ``sum_i mu_i h_i`` under ``KL(mu || center) <= eps``
the maximizer is an exponential tilt ``mu_i ∝ center_i * exp(h_i / lam)``.
The temperature ``lam`` is found by bisection in log space so that the
divergence meets the radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LAMBDA_LO = 1e-12
LAMBDA_HI = 1e6
KL_TOL = 1e-10


class PhiDivergenceError(ValueError):
    pass


@dataclass(frozen=True)
class PhiBall:
    center_weights: np.ndarray
    radius: float
    phi: str = "kl"

    def __post_init__(self):
        w = np.array(self.center_weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise PhiDivergenceError("center weights must be a nonempty vector")
        if np.any(w <= 0):
            raise PhiDivergenceError("center weights must be strictly positive")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise PhiDivergenceError("center weights must sum to 1")
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise PhiDivergenceError(f"radius must be finite and nonnegative, got {self.radius}")
        if self.phi != "kl":
            raise PhiDivergenceError(f"unsupported divergence {self.phi!r}")
        w.setflags(write=False)
        object.__setattr__(self, "center_weights", w)


def kl_divergence(mu, nu) -> float:
    """``sum mu log(mu / nu)`` with ``0 log 0 = 0``."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    mask = mu > 0
    if np.any(nu[mask] <= 0):
        return math.inf
    return math.fsum(mu[mask] * (np.log(mu[mask]) - np.log(nu[mask])))


def _tilt(center: np.ndarray, h: np.ndarray, lam: float) -> np.ndarray:
    logits = np.log(center) + (h - h.max()) / lam
    mu = np.exp(logits - logsumexp(logits))
    return mu / math.fsum(mu)


def phi_worst_case(ball: PhiBall, losses):
    """Maximize ``sum mu_i h_i`` over ``KL(mu || center) <= radius``.

    Returns ``(value, mu)``.  When the radius reaches ``-log`` of the
    center mass on the maximizers of ``h``, that conditional distribution
    is returned directly.
    """
    center = ball.center_weights
    h = np.asarray(losses, dtype=float)
    if h.shape != center.shape:
        raise PhiDivergenceError(f"{h.size} losses for {center.size} atoms")
    if not np.all(np.isfinite(h)):
        raise PhiDivergenceError("losses must be finite")
    eps = ball.radius
    if eps == 0.0 or np.ptp(h) == 0.0:
        return math.fsum(center * h), center.copy()

    top = h == h.max()
    top_mass = math.fsum(center[top])
    if eps >= -math.log(top_mass):
        mu = np.where(top, center, 0.0)
        mu = mu / top_mass
        return math.fsum(mu * h), mu

    # divergence of the tilt decreases in lam
    lo, hi = math.log(LAMBDA_LO), math.log(LAMBDA_HI)
    feasible = _tilt(center, h, LAMBDA_HI)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        mu = _tilt(center, h, math.exp(mid))
        kl = kl_divergence(mu, center)
        if kl <= eps:
            feasible = mu
            hi = mid
        else:
            lo = mid
        if abs(kl - eps) <= KL_TOL or math.exp(hi) - math.exp(lo) <= 1e-12:
            break
    return math.fsum(feasible * h), feasible
