"""LDPC degree distributions and decoder MMSE transfer curves via
Gaussian-approximation density evolution.

Messages are modeled as consistent Gaussians N(mu, 2*mu); the check-node
update works on T(mu) = 1 - E[tanh(L/2)] (computed by Gauss-Hermite
quadrature and inverted from a tabulated monotone fit), which avoids
cancellation when messages become reliable.  The decoder transfer curve
maps the demodulator input precision rho (QPSK decoupled into two BPSK
channels, channel LLR mean 2*rho) to the a-posteriori symbol MMSE at the
density-evolution fixed point.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .state_evolution import TransferCurve, ld_curve
from .rate_analysis import tunnel_check

__all__ = [
    "DegreeDistribution",
    "parse_distribution",
    "bundled_distribution",
    "llr_mean_from_precision",
    "mmse_from_llr_mean",
    "ga_de_fixed_point",
    "ga_de_curve",
    "biawgn_threshold_db",
    "threshold_search",
]

RATE_DECLARED_TOL = 5e-3  # published optimized tables are up to ~4e-3 off


@dataclass(frozen=True)
class DegreeDistribution:
    """Edge-perspective LDPC degree distribution.

    ``vn_edge[i]`` is the fraction of edges attached to degree-i variable
    nodes, ``cn_edge[j]`` the check-node counterpart.  ``declared_rate``
    is optional metadata checked against the design rate.
    """

    vn_edge: dict
    cn_edge: dict
    declared_rate: float = None
    name: str = ""

    def __post_init__(self):
        for side, dist in (("vn", self.vn_edge), ("cn", self.cn_edge)):
            if not dist:
                raise ValueError(f"empty {side} distribution")
            for deg, frac in dist.items():
                if int(deg) < 2 or frac < 0:
                    raise ValueError(f"bad {side} entry {deg}: {frac}")
            total = sum(dist.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"{side} edge fractions sum to {total}, expected 1")
        if self.declared_rate is not None:
            if abs(self.design_rate - self.declared_rate) > RATE_DECLARED_TOL:
                raise ValueError(
                    f"design rate {self.design_rate:.6f} does not match declared "
                    f"{self.declared_rate} within {RATE_DECLARED_TOL}"
                )

    @property
    def design_rate(self):
        vn = sum(f / d for d, f in self.vn_edge.items())
        cn = sum(f / d for d, f in self.cn_edge.items())
        return 1.0 - cn / vn

    @property
    def vn_node_fractions(self):
        total = sum(f / d for d, f in self.vn_edge.items())
        return {d: (f / d) / total for d, f in self.vn_edge.items()}

    def to_json(self):
        return json.dumps(
            {
                "name": self.name,
                "rate": self.declared_rate,
                "vn_edge": {str(d): f for d, f in sorted(self.vn_edge.items())},
                "cn_edge": {str(d): f for d, f in sorted(self.cn_edge.items())},
            }
        )


_POLY_TERM = re.compile(
    r"(?P<coef>[0-9.eE+-]+)\s*(?:\*?\s*x(?:\^?\{?(?P<exp>\d+)\}?)?)?"
)


def _parse_poly(text):
    """'0.244x + 0.259x^2 + ...' -> {degree: fraction}, degree = exponent + 1."""
    out = {}
    for term in text.replace("-", "+-").split("+"):
        term = term.strip()
        if not term:
            continue
        m = _POLY_TERM.fullmatch(term)
        if not m:
            raise ValueError(f"cannot parse polynomial term {term!r}")
        coef = float(m.group("coef"))
        exp = int(m.group("exp")) if m.group("exp") else (1 if "x" in term else 0)
        out[exp + 1] = out.get(exp + 1, 0.0) + coef
    return out


def parse_distribution(source, name=""):
    """Build a DegreeDistribution from JSON text, a dict, or polynomials.

    Accepted forms:
      * JSON: {"vn_edge": {"2": 0.46, ...}, "cn_edge": {...}, "rate": 0.5}
      * dict with the same keys (degrees may be ints)
      * dict {"vn_poly": "0.24426x+0.25907x^2+...", "cn_poly": "..."}
    """
    if isinstance(source, str):
        source = json.loads(source)
    if "vn_poly" in source:
        vn = _parse_poly(source["vn_poly"])
        cn = _parse_poly(source["cn_poly"])
    else:
        vn = {int(d): float(f) for d, f in source["vn_edge"].items()}
        cn = {int(d): float(f) for d, f in source["cn_edge"].items()}
    return DegreeDistribution(
        vn_edge=vn,
        cn_edge=cn,
        declared_rate=source.get("rate"),
        name=source.get("name", name),
    )


def bundled_distribution(name):
    """Load one of the shipped degree distributions by name.

    Available: 'clip_kappa10', 'clip_kappa50', 'p2p_irregular', 'regular_3_6'.
    """
    text = resources.files("goamp.data").joinpath(f"{name}.json").read_text()
    return parse_distribution(text, name=name)


# ---------------------------------------------------------------------------
# consistent-Gaussian message algebra
#
# For L ~ N(mu, 2*mu) the error-type expectations concentrate near L = 0,
# exponentially far into the Gaussian tail for reliable messages.  Writing
# the Gaussian factor around l = 0,
#
#   E[g(L)] = e^{-mu/4}/sqrt(4 pi mu) * Integral g(l) e^{l/2} e^{-l^2/(4mu)} dl
#
# turns them into well-conditioned integrals of rapidly decaying smooth
# integrands: g = 1 - tanh(l/2) gives sech(l/2), g = sech^2(l/2) gives
# sech^2(l/2) e^{l/2}.  Small mu uses Gauss-Hermite in the scaled variable,
# large mu composite Gauss-Legendre in l (the Gaussian factor is then wide).

_GH_NODES, _GH_WEIGHTS = hermegauss(201)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)

_MU_MIN, _MU_MAX = 1e-8, 700.0
_MU_SWITCH = 10.0
_L_SPAN = 120.0


def _tilted_expectation(mu, g):
    """e^{-mu/4}/sqrt(4 pi mu) * Integral g(l) exp(-l^2/(4 mu)) dl, vectorized
    over mu; g must decay at least like e^{-|l|/2}."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    out = np.empty(mu.shape)
    small = mu < _MU_SWITCH
    if np.any(small):
        ms = mu[small][:, None]
        l = np.sqrt(2.0 * ms) * _GH_NODES[None, :]
        out[small] = (g(l) @ _GH_WEIGHTS) / np.sqrt(2.0 * np.pi) * np.exp(-ms[:, 0] / 4.0)
    if np.any(~small):
        ml = mu[~small][:, None]
        edges = np.linspace(-_L_SPAN, _L_SPAN, 9)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            l = 0.5 * (a + b) + 0.5 * (b - a) * _GL_NODES
            vals = g(l[None, :]) * np.exp(-(l[None, :] ** 2) / (4.0 * ml))
            total = total + 0.5 * (b - a) * (vals @ _GL_WEIGHTS)
        out[~small] = total * np.exp(-ml[:, 0] / 4.0) / np.sqrt(4.0 * np.pi * ml[:, 0])
    return out


def _one_minus_tanh_mean(mu):
    """T(mu) = E[1 - tanh(L/2)] for L ~ N(mu, 2*mu), exact to quadrature."""
    val = _tilted_expectation(mu, lambda l: 1.0 / np.cosh(np.clip(l, -700, 700) / 2.0))
    return np.clip(val, 1e-300, 2.0)


def _phi_chung(mu):
    """The canonical fitted reliability function exp(-0.4527 x^0.86 + 0.0218).

    Smooth, strictly decreasing and positive on (0, inf); kept for the
    whole range so that inversion stays well defined.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return np.clip(np.exp(-0.4527 * mu**0.86 + 0.0218), 1e-300, 1.0)


def _one_minus_mi(mu):
    """1 - I(X; L) in bits for a consistent Gaussian LLR, i.e.
    E[log2(1 + e^{-L})]; same tilted-integral treatment as T(mu)."""

    def g(l):
        lc = np.clip(l, -700.0, 700.0)
        return np.log1p(np.exp(-np.abs(lc))) / np.log(2.0) + np.where(
            lc < 0, -lc / np.log(2.0), 0.0
        )

    # g above is log2(1+e^{-l}) written stably; multiply by the e^{l/2} tilt
    def tilted(l):
        return g(l) * np.exp(np.clip(l, -700.0, 700.0) / 2.0)

    val = _tilted_expectation(mu, tilted)
    return np.clip(val, 1e-300, 1.0)


def mmse_from_llr_mean(mu):
    """BPSK symbol MMSE 1 - E[tanh^2(L/2)] under a consistent Gaussian LLR."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    out = np.empty(mu.shape)
    zero = mu <= 0
    out[zero] = 1.0
    nz = ~zero

    def g(l):
        lc = np.clip(l, -700, 700)
        return np.exp(lc / 2.0) / np.cosh(lc / 2.0) ** 2

    if np.any(nz):
        out[nz] = np.clip(_tilted_expectation(mu[nz], g), 0.0, 1.0)
    return out


def llr_mean_from_precision(rho):
    """Channel LLR mean of the QPSK demodulator at complex-symbol precision rho.

    Per real component the channel is BPSK +-1/sqrt(2) in noise of
    variance 1/(2 rho); the LLR 2*a*y/s^2 then has mean 2*rho.
    """
    return 2.0 * np.asarray(rho, dtype=float)


def _mi_gain(mu):
    """I(X; L) in bits for a consistent Gaussian LLR.

    Computed as 1 minus the information deficit; the deficit integrand is
    the one that concentrates near l = 0, so it is the quantity the
    tilted quadrature evaluates accurately.
    """
    return np.clip(1.0 - _one_minus_mi(mu), 1e-300, 1.0)


_T_TABLE_MU = np.geomspace(_MU_MIN, _MU_MAX, 4000)
_T_MODELS = {"exact": _one_minus_tanh_mean, "chung": _phi_chung, "exit": _one_minus_mi}
_T_TABLES = {}


def _t_table(model):
    if model not in _T_TABLES:
        _T_TABLES[model] = _T_MODELS[model](_T_TABLE_MU)
    return _T_TABLES[model]


def _t_inverse(t, model):
    """mu with T(mu) = t (T strictly decreasing); clamped at the table ends."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    table = _t_table(model)
    lt = np.log(np.clip(t, table[-1], table[0]))
    lmu = np.interp(-lt, -np.log(table), np.log(_T_TABLE_MU))
    return np.exp(lmu)


_J_TABLES = {}


def _j_table():
    # strictly increasing portion only: the gain saturates at 1.0 in
    # doubles around mu ~ 150 and ties would corrupt interpolation
    if "exit" not in _J_TABLES:
        vals = _mi_gain(_T_TABLE_MU)
        keep = np.concatenate(([True], np.diff(vals) > 0))
        _J_TABLES["exit"] = (_T_TABLE_MU[keep], vals[keep])
    return _J_TABLES["exit"]


def _j_inverse(j):
    """mu with I(X; L) = j (increasing).

    Below the tabulated range the gain is linear in mu, so queries are
    extrapolated proportionally; above it the last tabulated mu is
    returned (the decoder is effectively perfect there).
    """
    j = np.atleast_1d(np.asarray(j, dtype=float))
    mu_tab, val_tab = _j_table()
    out = np.exp(np.interp(np.log(np.clip(j, val_tab[0], val_tab[-1])),
                           np.log(val_tab), np.log(mu_tab)))
    low = j < val_tab[0]
    out[low] = mu_tab[0] * np.maximum(j[low], 1e-300) / val_tab[0]
    return out


@dataclass(frozen=True)
class GaDeResult:
    """Density-evolution fixed point at one channel condition."""

    mu_check: float
    mmse: float
    decoded: bool
    iterations: int
    converged: bool


def ga_de_fixed_point(dist, mu_channel, max_iters=5000, tol=1e-11, mu_cap=600.0, model="exit"):
    """Iterate the VN/CN Gaussian-approximation updates to a fixed point.

    ``model`` selects the scalar tracked through the consistent-Gaussian
    message model: 'exit' (mutual information with the reciprocal-channel
    check-node dual; matches sampled density evolution closely), 'exact'
    (mean matching with quadrature-exact E[1 - tanh(L/2)]) or 'chung'
    (mean matching with the canonical fitted reliability function).
    Returns the check-to-variable message mean, the a-posteriori symbol
    MMSE, and whether the decoder reached the perfect-decoding cap.
    """
    t_fn = _T_MODELS[model]
    vn_deg = np.array(sorted(dist.vn_edge), dtype=float)
    vn_frac = np.array([dist.vn_edge[int(d)] for d in vn_deg])
    cn_deg = np.array(sorted(dist.cn_edge), dtype=float)
    cn_frac = np.array([dist.cn_edge[int(d)] for d in cn_deg])
    node_deg = vn_deg
    node_frac = np.array([dist.vn_node_fractions[int(d)] for d in vn_deg])

    mu_c = 0.0
    decoded = False
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        mu_v = np.maximum(mu_channel + (vn_deg - 1.0) * mu_c, _MU_MIN)
        if model == "exit":
            # mutual-information tracking with the reciprocal-channel dual
            # at check nodes; all aggregates are kept as information
            # DEFICITS so reliable messages do not cancel
            deficit_v = float(vn_frac @ _one_minus_mi(mu_v))
            if deficit_v < 1e-13:
                # within double-precision of full information: the
                # 1 - J cancellation would stall the recursion here
                mu_c = mu_cap
                decoded = True
                converged = True
                break
            mu_dual = float(_j_inverse(deficit_v)[0])
            deficit_c = float(
                cn_frac @ _mi_gain(np.maximum((cn_deg - 1.0) * mu_dual, 1e-300))
            )
            mu_c_new = float(_t_inverse(deficit_c, "exit")[0])
        else:
            t_bar = float(vn_frac @ t_fn(mu_v))
            t_out = -np.expm1((cn_deg - 1.0) * np.log1p(-min(t_bar, 1.0 - 1e-16)))
            mu_c_new = float(cn_frac @ _t_inverse(t_out, model))
        if mu_c_new >= mu_cap:
            mu_c = mu_c_new
            decoded = True
            converged = True
            break
        if abs(mu_c_new - mu_c) <= tol * (1.0 + mu_c):
            mu_c = mu_c_new
            converged = True
            break
        mu_c = mu_c_new
    mu_app = mu_channel + node_deg * mu_c
    mmse = float(node_frac @ mmse_from_llr_mean(mu_app)) if not decoded else 0.0
    return GaDeResult(mu_check=mu_c, mmse=mmse, decoded=decoded, iterations=it, converged=converged)


def ga_de_curve(dist, rho_grid=None, rho_max=50.0, n_points=160, model="exit"):
    """Decoder MMSE transfer curve over the demodulator precision axis.

    Strictly decreasing in rho, with the density-evolution cliff at the
    code's threshold precision; values are floored at 1e-30 so the curve
    stays log-interpolable after perfect decoding.
    """
    if rho_grid is None:
        rho_grid = np.geomspace(1e-6 * rho_max, 1.05 * rho_max, n_points)
    mmse = np.empty(len(rho_grid))
    for i, rho in enumerate(rho_grid):
        res = ga_de_fixed_point(dist, float(llr_mean_from_precision(rho)), model=model)
        mmse[i] = max(res.mmse, 1e-30)
    return TransferCurve.from_samples(
        rho_grid, mmse, increasing=False, meta={"kind": "ga_de", "name": dist.name}
    )


def biawgn_threshold_db(dist, lo_db=0.0, hi_db=3.0, tol_db=0.005, model="exit"):
    """BPSK-AWGN decoding threshold in Eb/N0 (dB) under the GA model.

    Bisects on the noise level; the channel LLR mean for BPSK +-1 in
    N(0, sigma^2) is 2/sigma^2 and Eb/N0 = 1/(2 R sigma^2).
    """
    rate = dist.design_rate

    def decodes(ebn0_db):
        sigma2 = 1.0 / (2.0 * rate * 10 ** (ebn0_db / 10.0))
        return ga_de_fixed_point(dist, 2.0 / sigma2, model=model).decoded

    if not decodes(hi_db):
        raise ValueError(f"no convergence even at {hi_db} dB")
    if decodes(lo_db):
        raise ValueError(f"converges already at {lo_db} dB")
    while hi_db - lo_db > tol_db:
        mid = 0.5 * (lo_db + hi_db)
        if decodes(mid):
            hi_db = mid
        else:
            lo_db = mid
    return 0.5 * (lo_db + hi_db)


def threshold_search(
    dist,
    spectrum,
    lam,
    lo_db=0.0,
    hi_db=8.0,
    tol_db=0.01,
    curve=None,
    ld_kwargs=None,
    model="exit",
):
    """Smallest SNR (dB) at which the decoding tunnel opens for this code.

    Bisects tunnel_check over the LD transfer rebuilt at each candidate
    SNR; the decoder curve is SNR-independent and tabulated once.
    Raises if the tunnel state does not flip inside the window.
    """
    from .nonlinearity import ClipSpec

    ld_kwargs = ld_kwargs or {}

    def ld_at(snr_db):
        return ld_curve(spectrum, ClipSpec(lam, 10 ** (-snr_db / 10.0)), **ld_kwargs)

    hi_curve = ld_at(hi_db)
    if curve is None:
        rho_cap = float(hi_curve.meta["rho_max"]) * 1.1
        curve = ga_de_curve(dist, rho_max=rho_cap, model=model)

    def is_open(snr_db, ld=None):
        ld = ld if ld is not None else ld_at(snr_db)
        return tunnel_check(curve, ld)["open"]

    if not is_open(hi_db, hi_curve):
        raise ValueError(f"tunnel closed across the whole window (top {hi_db} dB)")
    if is_open(lo_db):
        raise ValueError(f"tunnel already open at the window bottom {lo_db} dB")
    lo, hi = lo_db, hi_db
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if is_open(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
