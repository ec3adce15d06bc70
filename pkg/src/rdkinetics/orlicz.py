"""Exponential Young functions, gauge norms and the moment inequalities.

Phi_alpha(x) = exp(|x|^alpha) - 1 for alpha >= 1.  On a finite space every
function has all exponential moments, so the Orlicz machinery reduces to
checkable moment bookkeeping: the gauge (Luxemburg) norm, the entropic
inequality, the Jensen contraction of Markov semigroups on these balls, and
the exponential-moment comparison behind the solution bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .generators import Generator, semigroup_apply
from .measure import FiniteMeasureSpace, entropy, exp_moment, integrate, log_exp_moment

__all__ = [
    "YoungExp",
    "gauge_norm",
    "entropic_bound",
    "jensen_contraction_check",
    "moment_bound_check",
    "l1_embedding_constants",
]

_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class YoungExp:
    """Young function Phi_alpha(x) = exp(|x|^alpha) - 1, alpha >= 1."""

    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")

    def __call__(self, x):
        return np.expm1(np.abs(x) ** self.alpha)

    def inverse(self, y: float) -> float:
        """Phi_alpha^{-1}(y) for y >= 0."""
        if y < 0.0:
            raise ValueError("Young functions are nonnegative")
        return math.log1p(y) ** (1.0 / self.alpha)


def _log_mean_phi_plus_one(space, f, inv_lambda, alpha):
    """log mu(exp(|f/lambda|^alpha)); the condition mu(Phi) <= 1 reads <= log 2."""
    g = (inv_lambda * np.abs(f)) ** alpha
    return float(logsumexp(space.log_weights + g))


def gauge_norm(space: FiniteMeasureSpace, f, phi: YoungExp, tol: float = 1e-10) -> float:
    """Luxemburg norm inf{lambda > 0 : mu(Phi_alpha(f/lambda)) <= 1}.

    mu(Phi(f/lambda)) is continuous and strictly decreasing in lambda on a
    finite space, so the norm is found by bisection to relative tolerance
    tol; the criterion is evaluated in log-sum-exp form and never overflows.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    f = space.check_function(f)
    sup = float(np.abs(f).max())
    if sup == 0.0:
        return 0.0

    def crit(lam):
        # positive when mu(Phi(f/lam)) > 1
        return _log_mean_phi_plus_one(space, f, 1.0 / lam, phi.alpha) - _LOG2

    lo = sup * 1e-6
    hi = sup * 10.0 / _LOG2
    # the bracket above covers every alpha >= 1; grow/shrink defensively
    while crit(hi) > 0.0:
        hi *= 4.0
    while crit(lo) < 0.0:
        lo *= 0.25
        if lo < sup * 1e-300:
            return 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if crit(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def entropic_bound(
    space: FiniteMeasureSpace, f, g, gamma: float
) -> tuple[float, float]:
    """Both sides of mu(fg) <= (1/gamma) Ent_mu(f) + (mu(f)/gamma) log mu(e^{gamma g}).

    Requires f >= 0, f not identically 0.  Returns (lhs, rhs).
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    f = space.check_function(f)
    g = space.check_function(g)
    if np.any(f < 0.0):
        raise ValueError("f must be componentwise nonnegative")
    mf = integrate(space, f)
    if mf <= 0.0:
        raise ValueError("f must not be identically zero")
    lhs = integrate(space, f * g)
    log_mom = float(logsumexp(space.log_weights + gamma * g))
    rhs = entropy(space, f) / gamma + mf / gamma * log_mom
    return lhs, rhs


def jensen_contraction_check(
    gen: Generator, f, phi: YoungExp, t: float
) -> tuple[float, float]:
    """(mu(Phi(f)), mu(Phi(P_t f))): the semigroup contracts the modulus.

    Values that would overflow double precision saturate to inf.
    """
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    space = gen.space
    f = space.check_function(f)
    before = _mean_phi(space, f, phi)
    after = _mean_phi(space, semigroup_apply(gen, t, f), phi)
    return before, after


def _mean_phi(space, f, phi):
    lm = _log_mean_phi_plus_one(space, f, 1.0, phi.alpha)
    if lm > 709.0:
        return float("inf")
    return float(np.expm1(lm))


def moment_bound_check(
    space: FiniteMeasureSpace, u, bound_fs, gamma: float, alpha: float = 1.0
) -> float:
    """Slack of mu(e^{gamma u^alpha}) against the pair of bounding functions.

    slack = max_i mu(e^{gamma bound_i^alpha}) - mu(e^{gamma |u|^alpha});
    solver outputs must keep it above -1e-8 * (1 + moments).
    """
    b1, b2 = bound_fs
    m_u = exp_moment(space, u, gamma, alpha)
    m_b = max(
        exp_moment(space, b1, gamma, alpha),
        exp_moment(space, b2, gamma, alpha),
    )
    return m_b - m_u


def l1_embedding_constants(phi: YoungExp) -> tuple[float, float]:
    """(M, tau) with |x| <= tau * Phi(x) for |x| >= M, so ||f||_1 <= (M+tau)||f||_Phi.

    For Phi_1 we take M = Phi^{-1}(1) = log 2 and tau = 1 (e^x - 1 >= x for
    all x >= 0); for alpha > 1 the crossing can sit right of Phi^{-1}(1), and
    M = max(1, Phi^{-1}(1)) = 1 works since Phi_alpha(x) >= e^x - 1 >= x on
    x >= 1.
    """
    if phi.alpha == 1.0:
        return _LOG2, 1.0
    return 1.0, 1.0


def log_exp_moment_of(space, f, gamma, alpha=1.0):
    """Re-export of measure.log_exp_moment for callers living here."""
    return log_exp_moment(space, f, gamma, alpha)
