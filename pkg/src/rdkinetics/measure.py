"""Finite probability spaces and the elementary integrals built on them.

Everything downstream works over a finite set of N states carrying strictly
positive probability weights.  Functions on the space are plain length-N
float arrays; the space object validates dimensions and provides the
integral, entropy and exponential-moment primitives.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "FiniteMeasureSpace",
    "integrate",
    "entropy",
    "exp_moment",
    "log_exp_moment",
]

# exp(x) overflows double precision just above this
_EXP_OVERFLOW = 709.0


class FiniteMeasureSpace:
    """Probability measure on a finite state set.

    Weights must be strictly positive and sum to 1.  Sums within 1e-9 of 1
    are renormalized (absorbs parser rounding); anything further off is
    rejected.  Instances are immutable and safe to share.
    """

    __slots__ = ("weights", "log_weights", "n")

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if np.any(w <= 0.0):
            raise ValueError("all weights must be strictly positive")
        total = w.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, not 1 within 1e-9")
        if abs(total - 1.0) > 1e-12:
            w = w / total
        w = w.copy()
        w.flags.writeable = False
        self.weights = w
        lw = np.log(w)
        lw.flags.writeable = False
        self.log_weights = lw
        self.n = w.size

    @classmethod
    def uniform(cls, n: int) -> "FiniteMeasureSpace":
        return cls(np.full(n, 1.0 / n))

    def check_function(self, f) -> np.ndarray:
        """Validate that f is a state function on this space."""
        arr = np.asarray(f, dtype=float)
        if arr.shape != (self.n,):
            raise ValueError(
                f"state function has shape {arr.shape}, expected ({self.n},)"
            )
        return arr

    def __eq__(self, other):
        return (
            isinstance(other, FiniteMeasureSpace)
            and self.n == other.n
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.n, self.weights.tobytes()))

    def __repr__(self):
        return f"FiniteMeasureSpace(n={self.n})"


def integrate(space: FiniteMeasureSpace, f) -> float:
    """mu(f) = sum_x mu_x f(x)."""
    f = space.check_function(f)
    return float(space.weights @ f)


def _xlogx_bregman(ratio: np.ndarray) -> np.ndarray:
    """h(x) = x log x - x + 1 >= 0, evaluated stably near x = 1.

    Written as (1+d) log1p(d) - d with d = x - 1 so that the quadratic
    behaviour at x = 1 is not destroyed by cancellation; h(0) = 1.
    """
    d = ratio - 1.0
    out = np.empty_like(ratio)
    # d rounding to -1 means the ratio is subnormal: the limit value is 1
    nz = d > -1.0
    out[~nz] = 1.0
    out[nz] = (1.0 + d[nz]) * np.log1p(d[nz]) - d[nz]
    return out


def entropy(space: FiniteMeasureSpace, f) -> float:
    """Ent_mu(f) = mu(f log f) - mu(f) log mu(f), for f >= 0 not identically 0.

    Uses the 0 log 0 = 0 convention.  Computed in the equivalent Bregman
    form m * mu(h(f/m)) with h(x) = x log x - x + 1, which is pointwise
    nonnegative and keeps full precision for nearly constant f.
    """
    f = space.check_function(f)
    if np.any(f < 0.0):
        raise ValueError("entropy requires a componentwise nonnegative function")
    m = float(space.weights @ f)
    if m <= 0.0:
        raise ValueError("entropy of the zero function is undefined")
    val = m * float(space.weights @ _xlogx_bregman(f / m))
    return max(val, 0.0)


def log_exp_moment(space: FiniteMeasureSpace, f, gamma: float, alpha: float = 1.0) -> float:
    """log mu(exp(gamma |f|^alpha)), evaluated in log-sum-exp form.

    Never overflows; the companion exp_moment exponentiates this when safe.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    f = space.check_function(f)
    g = gamma * np.abs(f) ** alpha
    return float(logsumexp(space.log_weights + g))


def exp_moment(space: FiniteMeasureSpace, f, gamma: float, alpha: float = 1.0) -> float:
    """mu(exp(gamma |f|^alpha)); always >= 1 with equality iff f == 0.

    If the moment overflows double precision the result saturates to inf and
    a warning reports the state responsible for the largest exponent.
    """
    lm = log_exp_moment(space, f, gamma, alpha)
    if lm > _EXP_OVERFLOW:
        f = space.check_function(f)
        worst = int(np.argmax(gamma * np.abs(f) ** alpha))
        warnings.warn(
            f"exp_moment overflow (log moment {lm:.3g}); "
            f"largest exponent at state {worst}",
            RuntimeWarning,
            stacklevel=2,
        )
        return float("inf")
    return float(np.exp(lm))
