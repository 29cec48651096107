"""Clipping front-end and its exact scalar MMSE inverse (de-clipping).

The observation channel clips real and imaginary parts independently at
+-lambda after AWGN: y = Q(z + n).  Given a Gaussian pseudo-observation
of z, the posterior are available in closed form:

  * interior observation (|y| < lambda): the likelihood is an exact
    Gaussian, so the posterior is conjugate-Gaussian;
  * saturated observation (y = +-lambda): the likelihood is a Gaussian
    tail mass, and the posterior moments reduce to truncated-Gaussian
    algebra in the auxiliary variable w = z + n.

The saturated-branch hazard ratio phi/Q is evaluated with erfcx for
numerical stability far into the tail.

The MSE transfer function of the de-clipper (psi_se) is evaluated under
the cavity joint in which the true z equals the pseudo-observation plus
independent noise: pseudo ~ CN(0, zeta - v), z = pseudo + CN(0, v).
Under that joint the de-clipping posterior is exact, so its mean squared
error equals its average posterior variance; see the receiver module's
diagnostics for the empirical confirmation at finite N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erfcx, ndtr

__all__ = [
    "ClipSpec",
    "clip",
    "clip_complex",
    "declip_posterior",
    "declip_posterior_vec",
    "psi_se_hat",
    "psi_se_quad",
]

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class ClipSpec:
    """Clipping threshold and AWGN variance; lambda may be +inf (no clipping)."""

    lam: float
    sigma2: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("clipping threshold must be positive (or +inf)")
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")

    @property
    def snr(self):
        return 1.0 / self.sigma2

    @property
    def snr_db(self):
        return 10.0 * np.log10(self.snr)


def clip(v, lam):
    """Scalar clipping: lambda if v >= lambda, -lambda if v <= -lambda, else v."""
    if not lam > 0:
        raise ValueError("clipping threshold must be positive")
    return np.clip(v, -lam, lam)


def clip_complex(v, lam):
    """Componentwise clipping of real and imaginary parts."""
    v = np.asarray(v, dtype=np.complex128)
    return clip(v.real, lam) + 1j * clip(v.imag, lam)


def _hazard(b):
    # phi(b) / Q(b), stable for large positive b
    return _SQRT_2_OVER_PI / erfcx(b / np.sqrt(2.0))


def _declip_component(m, w, y, v, lam):
    """Posterior (mean, var) of real z with prior N(m, w), observation y = Q(z+n),
    n ~ N(0, v).  Vectorized over m and y."""
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isinf(lam):
        post = 1.0 / (1.0 / w + 1.0 / v)
        return post * (m / w + y / v), np.full(m.shape, post)
    hi = y >= lam
    lo = y <= -lam
    mid = ~(hi | lo)
    mean = np.empty_like(m)
    var = np.empty_like(m)
    post = 1.0 / (1.0 / w + 1.0 / v)
    mean[mid] = post * (m[mid] / w + y[mid] / v)
    var[mid] = post
    # saturated: w_aux = z + n ~ N(m, w+v) truncated to the tail
    s2 = w + v
    st = np.sqrt(s2)
    k = w / s2
    resid = w * v / s2
    b = (lam - m[hi]) / st
    h = _hazard(b)
    mean[hi] = m[hi] + k * st * h
    var[hi] = resid + k * k * s2 * (1.0 + b * h - h * h)
    b = (lam + m[lo]) / st
    h = _hazard(b)
    mean[lo] = m[lo] - k * st * h
    var[lo] = resid + k * k * s2 * (1.0 + b * h - h * h)
    return mean, var


def declip_posterior_vec(pseudo, pseudo_var, y, spec):
    """Vectorized de-clipping posterior over complex arrays.

    Returns (means, per-symbol variances); variance sums the two
    real-component posterior variances.
    """
    if pseudo_var <= 0:
        raise ValueError("pseudo variance must be positive")
    pseudo = np.asarray(pseudo, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    lam = spec.lam
    if np.any(np.abs(y.real) > lam) or np.any(np.abs(y.imag) > lam):
        raise ValueError("observation outside [-lambda, lambda] is impossible under clipping")
    w = pseudo_var / 2.0
    v = spec.sigma2 / 2.0
    mr, vr = _declip_component(pseudo.real, w, y.real, v, lam)
    mi, vi = _declip_component(pseudo.imag, w, y.imag, v, lam)
    return mr + 1j * mi, vr + vi


def declip_posterior(pseudo, pseudo_var, y, spec):
    """Scalar de-clipping posterior; see :func:`declip_posterior_vec`."""
    from .denoisers import ScalarPosterior

    mean, var = declip_posterior_vec(
        np.atleast_1d(np.asarray(pseudo, dtype=np.complex128)),
        pseudo_var,
        np.atleast_1d(np.asarray(y, dtype=np.complex128)),
        spec,
    )
    return ScalarPosterior(mean=complex(mean[0]), variance=float(var[0]))


def _sample_cn(rng, var, n):
    return np.sqrt(var / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def psi_se_hat(pseudo_var, z_var, spec, samples=200_000, rng=None):
    """Monte-Carlo MSE transfer of the de-clipper at pseudo variance v.

    Samples the cavity joint (pseudo ~ CN(0, z_var - v), z = pseudo +
    CN(0, v)), forms y = Q(z + n) and averages the posterior variances;
    since the posterior is exact under this joint, this estimates the MSE.
    Returns (estimate, standard_error).
    """
    v = float(pseudo_var)
    if v <= 0 or z_var <= 0:
        raise ValueError("variances must be positive")
    rng = np.random.default_rng(rng)
    # pseudo variances above the z prior variance carry no less information
    # than the prior itself; clamp so psi_se saturates at its prior-only value
    v = min(v, z_var)
    pseudo = _sample_cn(rng, z_var - v, samples)
    z = pseudo + _sample_cn(rng, v, samples)
    y = clip_complex(z + _sample_cn(rng, spec.sigma2, samples), spec.lam)
    _, post_var = declip_posterior_vec(pseudo, v, y, spec)
    est = float(np.mean(post_var))
    se = float(np.std(post_var, ddof=1) / np.sqrt(samples))
    return est, se


# fixed Gauss-Legendre panel rule for the deterministic evaluator
_GL_NODES, _GL_WEIGHTS = leggauss(96)


def _panel_integrate(f, a, b):
    """integral of f on [a, b] by 96-point Gauss-Legendre."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid + half * _GL_NODES
    return half * np.dot(_GL_WEIGHTS, f(x))


def _mean_post_var_given_pseudo(p, w, v, lam):
    """E over (z, n) of the de-clip posterior variance, given the pseudo value p.

    The interior branch has constant variance; the saturated branches'
    variances depend only on p, weighted by the tail probabilities of
    w_aux = z + n ~ N(p, w + v).
    """
    s2 = w + v
    st = np.sqrt(s2)
    v_int = 1.0 / (1.0 / w + 1.0 / v)
    resid = w * v / s2
    k = w / s2
    b_hi = (lam - p) / st
    b_lo = (lam + p) / st
    p_hi = ndtr(-b_hi)
    p_lo = ndtr(-b_lo)
    h = _hazard(b_hi)
    var_hi = resid + k * k * s2 * (1.0 + b_hi * h - h * h)
    h = _hazard(b_lo)
    var_lo = resid + k * k * s2 * (1.0 + b_lo * h - h * h)
    return v_int * (1.0 - p_hi - p_lo) + var_hi * p_hi + var_lo * p_lo


def psi_se_quad(pseudo_var, z_var, spec):
    """Deterministic MSE transfer of the de-clipper (quadrature over the pseudo).

    Same quantity as :func:`psi_se_hat` without Monte-Carlo noise: the
    conditional mean posterior variance given the pseudo value is in
    closed form, leaving a single smooth integral over the pseudo
    marginal N(0, (z_var - v)/2) per real component.
    """
    v = float(pseudo_var)
    if v <= 0 or z_var <= 0:
        raise ValueError("variances must be positive")
    lam = spec.lam
    v = min(v, z_var)
    w = v / 2.0
    nu = spec.sigma2 / 2.0
    if np.isinf(lam):
        return 2.0 / (2.0 / v + 2.0 / spec.sigma2)
    q2 = (z_var - v) / 2.0
    if q2 == 0.0:
        return 2.0 * float(_mean_post_var_given_pseudo(np.array([0.0]), w, nu, lam)[0])

    q = np.sqrt(q2)
    pdf_norm = 1.0 / (q * np.sqrt(2.0 * np.pi))

    def f(p):
        weight = pdf_norm * np.exp(-0.5 * (p / q) ** 2)
        return _mean_post_var_given_pseudo(p, w, nu, lam) * weight

    span = 8.0 * q
    edges = sorted({-span, span, *(e for e in (-lam, lam) if -span < e < span)})
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += _panel_integrate(f, a, b)
    return 2.0 * float(total)
