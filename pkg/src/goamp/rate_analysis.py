"""Achievable rate of the receiver by integrating MMSE over precision,
the decoding-tunnel verdict, and the MRC baseline on the linearized
clipping model.

The rate integral runs over the precision axis in nats and is converted
to bits per complex symbol once at the end; the no-clipping, identity-
channel reduction to log2(1 + snr) pins the normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import erf

from .channel import ChannelOperator
from .nonlinearity import ClipSpec
from .state_evolution import ld_curve

__all__ = [
    "RateResult",
    "LinearizedClipModel",
    "demod_mmse_curve",
    "max_rate",
    "rate_with_code",
    "tunnel_check",
    "bussgang_alpha",
    "linearized_clip_model",
    "mrc_rate",
]

LN2 = np.log(2.0)


@dataclass(frozen=True)
class RateResult:
    """Rate in bits/symbol plus the integrand and fixed-point diagnostics."""

    rate: float
    rate_nats: float
    upper_limit: float
    quadrature_error: float
    fixed_points: tuple = ()
    integrand_samples: tuple = ()
    constraint_ok: bool = True
    first_violation: float = None


def demod_mmse_curve(prior):
    """Demodulator MMSE as a function of precision (vectorized callable)."""

    def phi_s(rho):
        rho = np.asarray(rho, dtype=float)
        out = np.empty(rho.shape)
        zero = rho <= 0
        out[zero] = prior.power
        nz = ~zero
        if np.any(nz):
            out[nz] = [prior.se_mmse(1.0 / r) for r in np.atleast_1d(rho[nz])]
        return out

    return phi_s


def _ld_inverse(curve):
    """gamma-check inverse as a total function of rho.

    Below the tabulated range the enhanced LD passes its input through
    unimproved (posterior variance worse than its zero-information
    output), so the inverse continues as 1/rho; just above the top of
    the range (up to the perfect-decoder limit) the smallest tabulated
    posterior variance is used.
    """
    y_lo, y_hi = curve.range
    x_at_top = float(curve.inverse(y_hi))

    def inv(rho):
        if rho <= 0:
            return np.inf
        if rho < y_lo:
            return 1.0 / rho
        if rho >= y_hi:
            return x_at_top
        return float(curve.inverse(rho))

    return inv


def _find_crossings(f, g_inv, rho_max, n_scan=1500):
    """Intersections of the demod curve and the LD inverse on (0, rho_max)."""
    rhos = np.linspace(1e-9, rho_max * (1 - 1e-9), n_scan)
    diff = np.array([f(np.array([r]))[0] - g_inv(r) for r in rhos])
    finite = np.isfinite(diff)
    idx = np.where(finite[:-1] & finite[1:] & (np.sign(diff[:-1]) != np.sign(diff[1:])))[0]
    crossings = []
    for i in idx:
        r = brentq(lambda t: f(np.array([t]))[0] - g_inv(t), rhos[i], rhos[i + 1], xtol=1e-12)
        crossings.append((r, f(np.array([r]))[0]))
    return crossings


def max_rate(spec, prior, clip, curve=None, n_samples=200):
    """Maximum achievable rate: integral of min(demod MMSE, LD inverse).

    ``curve`` may carry a pre-tabulated LD transfer (from
    :func:`goamp.state_evolution.ld_curve`); it is computed here
    otherwise.  Returns a RateResult in bits per complex symbol.
    """
    if curve is None:
        curve = ld_curve(spec, clip)
    rho_max = float(curve.meta["rho_max"])
    phi_s = demod_mmse_curve(prior)
    g_inv = _ld_inverse(curve)
    crossings = _find_crossings(phi_s, g_inv, rho_max)

    def integrand(rho):
        return min(float(phi_s(np.array([rho]))[0]), g_inv(rho))

    # integrate piecewise between crossings so quad sees smooth branches
    edges = [0.0] + [r for r, _ in crossings] + [rho_max]
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 0:
            continue
        val, e = quad(integrand, a, b, limit=200, epsabs=1e-10, epsrel=1e-9)
        total += val
        err += e
    rho_samples = np.linspace(0.0, rho_max, n_samples)
    samples = tuple((float(r), integrand(r)) for r in rho_samples)
    return RateResult(
        rate=total / LN2,
        rate_nats=total,
        upper_limit=rho_max,
        quadrature_error=err / LN2,
        fixed_points=tuple(crossings),
        integrand_samples=samples,
    )


def rate_with_code(code_curve, ld_transfer, demod=None):
    """Achievable rate for a fixed decoder transfer curve.

    Integrates the decoder MMSE curve over [0, rho_max] and flags the
    first precision at which it is not strictly below the matched-code
    bound min(demod MMSE, LD inverse); the demod bound is only checked
    when ``demod`` is given.
    """
    rho_max = float(ld_transfer.meta["rho_max"])
    g_inv = _ld_inverse(ld_transfer)
    lo, hi = code_curve.domain
    if lo > 1e-6 or hi < rho_max * (1 - 1e-9):
        raise ValueError(
            f"code curve domain [{lo}, {hi}] does not cover the rate integral [0, {rho_max}]"
        )

    def code(rho):
        rho_c = min(max(rho, lo), hi)
        return float(code_curve(rho_c))

    ok = True
    first_violation = None
    for r in np.linspace(1e-9, rho_max * (1 - 1e-9), 1200):
        bound = g_inv(r)
        if demod is not None:
            bound = min(bound, float(demod(np.array([r]))[0]))
        if code(r) >= bound:
            ok = False
            first_violation = float(r)
            break
    val, err = quad(code, 0.0, rho_max, limit=200, epsabs=1e-10, epsrel=1e-9)
    return RateResult(
        rate=val / LN2,
        rate_nats=val,
        upper_limit=rho_max,
        quadrature_error=err / LN2,
        constraint_ok=ok,
        first_violation=first_violation,
    )


def tunnel_check(code_curve, ld_transfer, n_scan=2000):
    """Decoding-tunnel verdict: is the decoder curve strictly below the
    LD inverse on [0, rho_max)?

    Returns {'open': bool, 'first_violation': rho or None, 'margin': min gap}.
    """
    rho_max = float(ld_transfer.meta["rho_max"])
    g_inv = _ld_inverse(ld_transfer)
    lo, hi = code_curve.domain
    if hi < rho_max * (1 - 1e-9):
        raise ValueError(f"code curve domain ends at {hi} < rho_max {rho_max}")
    margin = np.inf
    first_violation = None
    for r in np.linspace(max(lo, 1e-9), rho_max * (1 - 1e-9), n_scan):
        bound = g_inv(r)
        if not np.isfinite(bound):
            continue
        gap = bound - float(code_curve(r))
        margin = min(margin, gap)
        if gap <= 0 and first_violation is None:
            first_violation = float(r)
    return {"open": first_violation is None, "first_violation": first_violation, "margin": margin}


# ---------------------------------------------------------------------------
# linearized clipping model + MRC baseline


@dataclass(frozen=True)
class LinearizedClipModel:
    """Scalar gain and distortion power of clipping on a Gaussian input."""

    alpha: float
    distortion_power: float  # per complex component
    input_power: float


def bussgang_alpha(lam, power, samples=None, rng=None):
    """Linearization gain E[w Q(w)] / E[w^2] for w ~ N(0, power/2) per part.

    Closed form erf(lam / sqrt(power)); Monte-Carlo estimate when
    ``samples`` is given (cross-check path).
    """
    if np.isinf(lam):
        return 1.0
    s2 = power / 2.0
    if samples is None:
        return float(erf(lam / np.sqrt(2.0 * s2)))
    rng = np.random.default_rng(rng)
    w = rng.normal(0.0, np.sqrt(s2), samples)
    return float(np.mean(w * np.clip(w, -lam, lam)) / s2)


def linearized_clip_model(lam, power):
    """Gain and distortion power of componentwise clipping at threshold lam.

    ``power`` is the per-complex-component input variance; the distortion
    power is returned per complex component (sum over real parts).
    """
    alpha = bussgang_alpha(lam, power)
    if np.isinf(lam):
        return LinearizedClipModel(alpha=1.0, distortion_power=0.0, input_power=power)
    s2 = power / 2.0
    s = np.sqrt(s2)
    u = lam / s
    q = 0.5 * (1.0 - erf(u / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    e_w2_inside = s2 * (1.0 - 2.0 * q - 2.0 * u * pdf)
    e_q2 = e_w2_inside + lam * lam * 2.0 * q
    dist = 2.0 * (e_q2 - alpha * alpha * s2)
    return LinearizedClipModel(alpha=alpha, distortion_power=float(dist), input_power=power)


def mrc_rate(op_or_spec, clip, seed=0):
    """Per-symbol rate of maximum-ratio combining on the linearized model.

    Column expectations are taken over one sampled finite channel
    (deterministic given the seed).  Returns bits per symbol, averaged
    over the transmit streams.
    """
    if isinstance(op_or_spec, ChannelOperator):
        op = op_or_spec
    else:
        op = ChannelOperator(op_or_spec, seed=seed)
    a = op.dense()
    spec = op.spectrum
    power_z = spec.z_power + clip.sigma2
    model = linearized_clip_model(clip.lam, power_z)
    alpha2 = model.alpha**2
    gram = a.conj().T @ a
    col_norm2 = np.real(np.diag(gram))
    cross = np.abs(gram) ** 2
    np.fill_diagonal(cross, 0.0)
    interference = alpha2 * cross.sum(axis=1)
    noise = (alpha2 * clip.sigma2 + model.distortion_power) * col_norm2
    sinr = alpha2 * col_norm2**2 / (interference + noise)
    return float(np.mean(np.log2(1.0 + sinr)))
