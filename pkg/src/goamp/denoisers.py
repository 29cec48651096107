"""Input-prior MMSE denoisers and the orthogonalization algebra.

The circle-minus / box-minus operators implement extrinsic-message
construction: given a posterior estimate with average posterior variance
``v_post`` computed from a pseudo-observation of variance ``v_pseudo``,
the extrinsic estimate is ``circle_minus(post, pseudo, v_post/v_pseudo)``
and its variance is ``box_minus(v_post, v_pseudo)``.

Complex-noise convention used throughout the package: CN(0, v) has
per-real-component variance v/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

__all__ = [
    "BoxMinusError",
    "InputPrior",
    "ScalarPosterior",
    "circle_minus",
    "box_minus",
    "gaussian_prior_mmse",
    "gaussian_posterior",
    "qpsk_posterior",
    "qpsk_se",
    "QPSK_POINTS",
]

# Gray-mapped QPSK: {(+-1 +-1j)/sqrt(2)}, unit average power.
QPSK_AMP = 1.0 / np.sqrt(2.0)
QPSK_POINTS = np.array(
    [QPSK_AMP * (s_r + 1j * s_i) for s_r in (+1, -1) for s_i in (+1, -1)],
    dtype=np.complex128,
)


class BoxMinusError(ArithmeticError):
    """Raised when a box-minus would produce a nonpositive variance.

    This is the state-evolution stall condition: the module did not
    improve on its pseudo-observation, so no positive-precision
    extrinsic message exists.  Solvers catch this to declare a fixed
    point reached.
    """

    def __init__(self, a, b):
        super().__init__(f"box_minus({a!r}, {b!r}): requires a < b for a positive result")
        self.a = a
        self.b = b


def circle_minus(a, b, c):
    """Estimate orthogonalization: (a - c*b) / (1 - c) with c in (0, 1)."""
    c = float(c)
    if not 0.0 < c < 1.0:
        raise ValueError(f"orthogonalization coefficient must be in (0, 1), got {c}")
    return (np.asarray(a) - c * np.asarray(b)) / (1.0 - c)


def box_minus(a, b):
    """Variance orthogonalization: (1/a - 1/b)^-1.

    Requires 0 < a < b; raises BoxMinusError otherwise (b may be +inf,
    in which case the result is a).
    """
    a = float(a)
    b = float(b)
    if a <= 0.0 or not a < b:
        raise BoxMinusError(a, b)
    if np.isinf(b):
        return a
    return 1.0 / (1.0 / a - 1.0 / b)


@dataclass(frozen=True)
class InputPrior:
    """Unit-power input distribution: 'gaussian' or 'qpsk'."""

    kind: str
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "qpsk"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.power != 1.0:
            raise ValueError("only unit-power priors are supported")

    def sample(self, n, rng):
        if self.kind == "gaussian":
            return np.sqrt(0.5) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        re = rng.choice((-QPSK_AMP, QPSK_AMP), size=n)
        im = rng.choice((-QPSK_AMP, QPSK_AMP), size=n)
        return re + 1j * im

    def posterior(self, pseudo, pseudo_var):
        """Componentwise posterior mean and per-symbol posterior variances."""
        if self.kind == "gaussian":
            return gaussian_posterior(pseudo, pseudo_var)
        return qpsk_posterior(pseudo, pseudo_var)

    def se_mmse(self, pseudo_var):
        """Scalar MMSE transfer: E ||E[x|x+CN(0,v)] - x||^2 per symbol."""
        if self.kind == "gaussian":
            return gaussian_prior_mmse(1.0 / pseudo_var)
        return qpsk_se(pseudo_var)


@dataclass(frozen=True)
class ScalarPosterior:
    """Posterior mean (complex) and per-symbol variance (sum of components)."""

    mean: complex
    variance: float


def gaussian_prior_mmse(rho):
    """MMSE of a unit-power complex Gaussian prior at precision rho >= 0."""
    rho = float(rho)
    if rho < 0:
        raise ValueError("precision must be nonnegative")
    return 1.0 / (1.0 + rho)


def gaussian_posterior(pseudo, pseudo_var):
    """Posterior of x ~ CN(0,1) given pseudo = x + CN(0, pseudo_var)."""
    if pseudo_var <= 0:
        raise ValueError("pseudo_var must be positive")
    shrink = 1.0 / (1.0 + pseudo_var)
    mean = np.asarray(pseudo) * shrink
    var = np.full(np.shape(mean), pseudo_var * shrink)
    return mean, var


def qpsk_posterior(pseudo, pseudo_var):
    """Posterior of a Gray-mapped QPSK symbol given pseudo = x + CN(0, v).

    Decouples per real component into BPSK amplitudes +-1/sqrt(2) under
    noise variance v/2: mean = a*tanh(2*a*r/v), component variance
    a^2 - mean^2.  Returned variance is the per-symbol sum.
    """
    if pseudo_var <= 0:
        raise ValueError("pseudo_var must be positive")
    pseudo = np.asarray(pseudo, dtype=np.complex128)
    a = QPSK_AMP
    g = 2.0 * a / pseudo_var
    mr = a * np.tanh(g * pseudo.real)
    mi = a * np.tanh(g * pseudo.imag)
    var = (a * a - mr * mr) + (a * a - mi * mi)
    return mr + 1j * mi, var


_GH_NODES, _GH_WEIGHTS = hermegauss(127)  # probabilists' nodes: weights sum to sqrt(2*pi)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(2.0 * np.pi)


def _bpsk_mmse(noise_var):
    # MMSE for x = +-a (a=1/sqrt(2)) in N(0, s2) noise, via Gauss-Hermite.
    a = QPSK_AMP
    s = np.sqrt(noise_var)
    y = a + s * _GH_NODES
    t = np.tanh(a * y / noise_var)
    return a * a * (1.0 - np.dot(_GH_WEIGHTS, t * t))


def qpsk_se(pseudo_var, samples=None, rng=None):
    """Scalar MMSE transfer of the QPSK prior at pseudo variance v.

    Deterministic Gauss-Hermite evaluation by default; pass ``samples``
    for a Monte-Carlo estimate instead (used for cross-checks).
    """
    v = float(pseudo_var)
    if v <= 0:
        raise ValueError("pseudo_var must be positive")
    if samples is None:
        return 2.0 * _bpsk_mmse(v / 2.0)
    rng = np.random.default_rng(rng)
    x = InputPrior("qpsk").sample(samples, rng)
    noise = np.sqrt(v / 2) * (rng.standard_normal(samples) + 1j * rng.standard_normal(samples))
    mean, _ = qpsk_posterior(x + noise, v)
    return float(np.mean(np.abs(mean - x) ** 2))
