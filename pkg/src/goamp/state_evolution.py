"""State evolution of the receiver and its variational single-input form.

Two solvers are provided and proved against each other:

  * the dual-input recursion alternating the two scalar denoiser
    transfers with the spectral LMMSE transfers (``se_trajectory`` /
    ``se_fixed_point``);
  * the variational single-input form in which the z-side loop is
    collapsed into an enhanced linear detector via its inner fixed point
    (``inner_fixed_point`` -> ``gamma_tilde`` -> ``breve_gamma``).

Both converge to the same fixed point; ``se_fixed_point`` checks the
residuals of all six fixed-point equations.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .channel import ChannelSpectrum, spectral_lmmse_terms
from .denoisers import BoxMinusError, InputPrior, box_minus
from .nonlinearity import ClipSpec, psi_se_hat, psi_se_quad

__all__ = [
    "SeState",
    "SeSystem",
    "TransferCurve",
    "se_step",
    "se_trajectory",
    "se_fixed_point",
    "gamma_se_analytic",
    "inner_fixed_point",
    "gamma_tilde",
    "breve_gamma",
    "gamma_check",
    "gamma_check_zero",
    "ld_curve",
    "isotonic_fit",
]


@dataclass(frozen=True)
class SeState:
    """Variance state of one iteration: pseudo and extrinsic, both sides."""

    pseudo_x: float
    pseudo_z: float
    ext_x: float
    ext_z: float
    t: int

    def __post_init__(self):
        for name in ("pseudo_x", "pseudo_z", "ext_x", "ext_z"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite variance, got {v}")


@dataclass(frozen=True)
class SeSystem:
    """Scenario bundle: channel spectrum, input prior, clipping channel.

    ``psi_mode`` selects the z-side transfer evaluation: 'quad'
    (deterministic, default) or 'mc' (Monte Carlo with ``mc_samples``).
    """

    spectrum: ChannelSpectrum
    prior: InputPrior
    clip: ClipSpec
    psi_mode: str = "quad"
    mc_samples: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.psi_mode not in ("quad", "mc"):
            raise ValueError("psi_mode must be 'quad' or 'mc'")

    @property
    def z_power(self):
        return self.spectrum.z_power

    def phi_se(self, pseudo_var_x):
        """Posterior variance of the prior denoiser at pseudo variance v."""
        return self.prior.se_mmse(pseudo_var_x)

    def psi_se(self, pseudo_var_z):
        """Posterior variance (= MSE) of the de-clipper at pseudo variance v."""
        if self.psi_mode == "quad":
            return psi_se_quad(pseudo_var_z, self.z_power, self.clip)
        est, _ = psi_se_hat(
            pseudo_var_z, self.z_power, self.clip, samples=self.mc_samples, rng=self.seed
        )
        return est


def gamma_se_analytic(vx, vz, spec):
    """LMMSE posterior variances for input variances (vx, vz), spectrally.

    Returns {'x': ..., 'z': ...} with
      x-side: vx * (1 - delta * c_gamma(rho)),   rho = vz/vx
      z-side: vz * c_gamma(rho)
    """
    if vx <= 0 or vz <= 0:
        raise ValueError("input variances must be positive")
    rho = vz / vx
    terms = spectral_lmmse_terms(spec, rho)
    return {
        "x": vx * terms["post_var_x_factor"],
        "z": vx * terms["post_var_z_factor"],
    }


def se_step(state, system):
    """One dual-input SE iteration (both denoisers, then the linear detector).

    Raises BoxMinusError when a module stops improving (fixed point).
    """
    if state.t == 0:
        # initialization: no pseudo-observations yet; the x side emits the
        # prior (extrinsic variance = power), the z side de-clips against
        # the z prior itself (pseudo variance = z power)
        ext_x = system.prior.power
        post_z = system.psi_se(system.z_power)
        ext_z = box_minus(post_z, system.z_power)
        pseudo_x, pseudo_z = state.pseudo_x, state.pseudo_z
    else:
        post_x = system.phi_se(state.pseudo_x)
        ext_x = box_minus(post_x, state.pseudo_x)
        post_z = system.psi_se(state.pseudo_z)
        ext_z = box_minus(post_z, state.pseudo_z)
        pseudo_x, pseudo_z = state.pseudo_x, state.pseudo_z
    ld = gamma_se_analytic(ext_x, ext_z, system.spectrum)
    new_pseudo_x = box_minus(ld["x"], ext_x)
    new_pseudo_z = box_minus(ld["z"], ext_z)
    return SeState(
        pseudo_x=new_pseudo_x,
        pseudo_z=new_pseudo_z,
        ext_x=ext_x,
        ext_z=ext_z,
        t=state.t + 1,
    )


def initial_se_state(system):
    """Pre-iteration state: pseudo variances at the prior powers."""
    return SeState(
        pseudo_x=system.prior.power,
        pseudo_z=system.z_power,
        ext_x=system.prior.power,
        ext_z=system.z_power,
        t=0,
    )


def se_trajectory(system, max_iters=200, tol=1e-12):
    """Iterate the dual-input SE from the no-information start.

    Returns (states, status) where status is 'converged', 'stalled' or
    'max_iters'.  states[k] is the state after k+1 iterations.
    """
    states = []
    state = initial_se_state(system)
    status = "max_iters"
    for _ in range(max_iters):
        try:
            new = se_step(state, system)
        except BoxMinusError:
            status = "stalled"
            break
        states.append(new)
        if abs(new.pseudo_x - state.pseudo_x) <= tol * state.pseudo_x and state.t > 0:
            state = new
            status = "converged"
            break
        state = new
    return states, status


def inner_fixed_point(vx, spec, clip, system=None, tol=1e-13, max_iters=400, vz0=None):
    """Fixed point of the z-side loop at fixed x-side extrinsic variance vx.

    Solves   pseudo_z = (c_gamma * vz) boxminus vz
             vz       = psi(pseudo_z) boxminus pseudo_z
    by damped log-domain iteration with secant acceleration and a
    bisection fallback on the sweep residual.  ``vz0`` warm-starts grid
    sweeps.  Returns (vz_star, pseudo_z_star).
    """
    if vx <= 0:
        raise ValueError("vx must be positive")
    if system is None:
        system = SeSystem(spectrum=spec, prior=InputPrior("gaussian"), clip=clip)
    if np.isinf(clip.lam):
        # conjugate-Gaussian de-clipper: extrinsic is exactly the noise level
        vz = clip.sigma2
        return vz, _pseudo_z_of(vz, vx, spec)

    def sweep(vz):
        pseudo_z = _pseudo_z_of(vz, vx, spec)
        post = system.psi_se(pseudo_z)
        return box_minus(post, pseudo_z)

    vz = vz0 if vz0 else min(2.0 * clip.sigma2, system.z_power)
    lv = np.log(vz)
    prev = None  # (log v, log residual g(v) = log sweep(v) - log v)
    for _ in range(max_iters):
        try:
            nxt = sweep(np.exp(lv))
        except BoxMinusError:
            break
        g = np.log(nxt) - lv
        if abs(g) <= tol:
            vz = float(np.exp(lv + g))
            return vz, _pseudo_z_of(vz, vx, spec)
        if prev is not None and g != prev[1]:
            step = -g * (lv - prev[0]) / (g - prev[1])  # secant on g
            if not np.isfinite(step) or abs(step) > 5.0:
                step = 0.5 * g
        else:
            step = 0.5 * g
        prev = (lv, g)
        lv = lv + step
    # bisection fallback on f(vz) = sweep(vz) - vz over a log grid bracket
    grid = np.geomspace(clip.sigma2 * 1e-6, system.z_power * 1e3, 200)
    fvals = []
    for gv in grid:
        try:
            fvals.append(sweep(gv) - gv)
        except BoxMinusError:
            fvals.append(np.nan)
    fvals = np.asarray(fvals)
    finite = np.isfinite(fvals)
    sign_change = np.where(
        finite[:-1] & finite[1:] & (np.sign(fvals[:-1]) != np.sign(fvals[1:]))
    )[0]
    if len(sign_change) == 0:
        raise RuntimeError(f"inner fixed point did not converge at vx={vx}")
    i = sign_change[0]
    vz = brentq(lambda gv: sweep(gv) - gv, grid[i], grid[i + 1], xtol=1e-300, rtol=1e-14)
    return vz, _pseudo_z_of(vz, vx, spec)


def _pseudo_z_of(vz, vx, spec):
    rho = vz / vx
    c_gamma = spectral_lmmse_terms(spec, rho)["c_gamma"]
    return box_minus(c_gamma * vz, vz)


def gamma_tilde(vx, spec, clip, system=None):
    """Enhanced-LD x-side posterior variance at input variance vx.

    Composition of the inner z-side fixed point with the x-side LMMSE
    posterior; strictly increasing in vx.
    """
    vz, _ = inner_fixed_point(vx, spec, clip, system=system)
    return gamma_se_analytic(vx, vz, spec)["x"]


def _gamma_check_of_u(u, spec, clip, system=None):
    """rho-domain LD transfer parameterized by the extrinsic input u = vx.

    Returns (post_var_x, next_rho) where next_rho = 1/post - 1/u evaluated
    in the cancellation-free form delta*c_gamma / (u * (1 - delta*c_gamma)).
    """
    vz, _ = inner_fixed_point(u, spec, clip, system=system)
    rho = vz / u
    c_gamma = spectral_lmmse_terms(spec, rho)["c_gamma"]
    delta = spec.delta
    dc = delta * c_gamma
    return u * (1.0 - dc), dc / (u * (1.0 - dc))


def _gamma_tilde_inverse(post_x, spec, clip, system=None, u_max=1e12):
    """Invert gamma_tilde: find u with gamma_tilde(u) = post_x."""
    if post_x <= 0:
        raise ValueError("posterior variance must be positive")
    lo = post_x  # gamma_tilde(u) < u, so the preimage is above post_x
    hi = max(2.0 * post_x, 1e-6)
    f = lambda u: gamma_tilde(u, spec, clip, system=system) - post_x
    while f(hi) < 0:
        hi *= 8.0
        if hi > u_max:
            raise ValueError(f"posterior variance {post_x} outside the invertible range")
    return brentq(f, lo, hi, xtol=1e-300, rtol=1e-14)


def breve_gamma(post_x, spec, clip, system=None):
    """Single-input LD transfer: next pseudo variance from posterior variance.

    breve(v) = v boxminus gamma_tilde^{-1}(v).
    """
    u = _gamma_tilde_inverse(post_x, spec, clip, system=system)
    return box_minus(post_x, u)


def gamma_check(post_x, spec, clip, system=None):
    """rho-domain LD transfer: 1 / breve_gamma, evaluated cancellation-free."""
    u = _gamma_tilde_inverse(post_x, spec, clip, system=system)
    _, rho_next = _gamma_check_of_u(u, spec, clip, system=system)
    return rho_next


def gamma_check_zero(spec, clip, system=None, u_eval=1e-8):
    """Perfect-decoder limit of the rho-domain LD transfer.

    Evaluated at u = u_eval with a Richardson consistency check at
    10*u_eval; this is the upper integration limit of the rate integral.
    """
    _, r1 = _gamma_check_of_u(u_eval, spec, clip, system=system)
    _, r10 = _gamma_check_of_u(10.0 * u_eval, spec, clip, system=system)
    # the transfer is linear in u near 0; Richardson-extrapolate and use the
    # 10x point as a consistency probe of how flat the limit already is
    return r1 + (r1 - r10) / 9.0


# ---------------------------------------------------------------------------
# transfer curves


def isotonic_fit(y, increasing=True):
    """Pool-adjacent-violators regression (unit weights)."""
    y = np.asarray(y, dtype=float)
    if not increasing:
        return -isotonic_fit(-y, increasing=True)
    level = y.copy()
    weight = np.ones_like(y)
    n = len(y)
    means = []
    counts = []
    for i in range(n):
        means.append(level[i])
        counts.append(weight[i])
        while len(means) > 1 and means[-2] > means[-1]:
            m2, c2 = means.pop(), counts.pop()
            m1, c1 = means.pop(), counts.pop()
            means.append((m1 * c1 + m2 * c2) / (c1 + c2))
            counts.append(c1 + c2)
    out = np.empty(n)
    i = 0
    for m, c in zip(means, counts):
        out[i : i + int(c)] = m
        i += int(c)
    return out


@dataclass
class TransferCurve:
    """Sampled monotone map with PCHIP interpolation and inversion.

    ``x`` must be strictly increasing; ``y`` strictly monotone in the
    direction given by ``increasing``.  Noisy samples are isotonically
    regressed by :meth:`from_samples`.  When both axes are strictly
    positive the interpolation runs in log-log coordinates, which keeps
    curves spanning several decades accurate on a modest grid.
    """

    x: np.ndarray
    y: np.ndarray
    increasing: bool
    meta: dict = field(default_factory=dict)
    loglog: bool = True

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if len(self.x) != len(self.y) or len(self.x) < 2:
            raise ValueError("need at least two samples of equal length")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("x grid must be strictly increasing")
        dy = np.diff(self.y)
        if self.increasing and np.any(dy <= 0):
            raise ValueError("y not strictly increasing; use from_samples to smooth")
        if not self.increasing and np.any(dy >= 0):
            raise ValueError("y not strictly decreasing; use from_samples to smooth")
        self.loglog = bool(self.loglog) and bool(np.all(self.x > 0) and np.all(self.y > 0))
        tx = np.log(self.x) if self.loglog else self.x
        ty = np.log(self.y) if self.loglog else self.y
        self._fwd = PchipInterpolator(tx, ty, extrapolate=False)
        order = slice(None) if self.increasing else slice(None, None, -1)
        self._inv = PchipInterpolator(ty[order], tx[order], extrapolate=False)

    @classmethod
    def from_samples(cls, x, y, increasing, meta=None, loglog=True):
        """Build a curve from possibly noisy samples (isotonic smoothing).

        Exact ties after regression are separated by a relative epsilon so
        the curve stays strictly monotone and invertible.
        """
        order = np.argsort(x)
        x = np.asarray(x, dtype=float)[order]
        y = isotonic_fit(np.asarray(y, dtype=float)[order], increasing=increasing)
        sign = 1.0 if increasing else -1.0
        for i in range(1, len(y)):
            if sign * (y[i] - y[i - 1]) <= 0:
                y[i] = y[i - 1] + sign * (abs(y[i - 1]) * 1e-12 + 1e-300)
        return cls(x=x, y=y, increasing=increasing, meta=meta or {}, loglog=loglog)

    def __call__(self, xq):
        xq = np.log(xq) if self.loglog else xq
        out = self._fwd(xq)
        if np.any(np.isnan(np.atleast_1d(out))):
            raise ValueError("query outside the tabulated domain")
        return np.exp(out) if self.loglog else out

    def inverse(self, yq):
        yq = np.log(yq) if self.loglog else yq
        out = self._inv(yq)
        if np.any(np.isnan(np.atleast_1d(out))):
            raise ValueError("query outside the tabulated range")
        return np.exp(out) if self.loglog else out

    @property
    def domain(self):
        return float(self.x[0]), float(self.x[-1])

    @property
    def range(self):
        lo, hi = float(np.min(self.y)), float(np.max(self.y))
        return lo, hi

    def to_csv(self, path_or_buf):
        """Write samples with a '#'-prefixed metadata header."""
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            buf = open(path_or_buf, "w")
            close = True
        else:
            buf = path_or_buf
        try:
            for k in sorted(self.meta):
                buf.write(f"# {k}={self.meta[k]}\n")
            buf.write(f"# increasing={self.increasing}\n")
            buf.write("x,y\n")
            for xi, yi in zip(self.x, self.y):
                buf.write(f"{xi:.17g},{yi:.17g}\n")
        finally:
            if close:
                buf.close()

    @classmethod
    def from_csv(cls, path_or_buf):
        if isinstance(path_or_buf, (str, bytes)):
            with open(path_or_buf) as fh:
                text = fh.read()
        else:
            text = path_or_buf.read()
        meta = {}
        xs, ys = [], []
        increasing = True
        for line in io.StringIO(text):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() == "increasing":
                    increasing = val.strip() == "True"
                else:
                    meta[key.strip()] = val.strip()
            elif not line.startswith("x,"):
                a, b = line.split(",")
                xs.append(float(a))
                ys.append(float(b))
        return cls(x=np.array(xs), y=np.array(ys), increasing=increasing, meta=meta)


def ld_curve(spec, clip, system=None, u_grid=None, n_points=192, u_min=1e-6, u_max=1e4):
    """Tabulate the rho-domain LD transfer as a decreasing TransferCurve.

    Parameterized by the x-side extrinsic variance u on a log grid; the
    curve maps the x-side posterior variance to the delivered precision
    of the next pseudo-observation.  meta carries the perfect-decoder
    limit 'rho_max' (= gamma_check at 0).
    """
    if u_grid is None:
        u_grid = np.geomspace(u_min, u_max, n_points)
    posts = np.empty(len(u_grid))
    rhos = np.empty(len(u_grid))
    vz = None
    for i, u in enumerate(u_grid):
        vz, _ = inner_fixed_point(u, spec, clip, system=system, vz0=vz)
        rho = vz / u
        dc = spec.delta * spectral_lmmse_terms(spec, rho)["c_gamma"]
        posts[i] = u * (1.0 - dc)
        rhos[i] = dc / (u * (1.0 - dc))
    rho_max = gamma_check_zero(spec, clip, system=system)
    meta = {"rho_max": rho_max, "rho_min": float(rhos[-1])}
    return TransferCurve.from_samples(posts, rhos, increasing=False, meta=meta)


# ---------------------------------------------------------------------------
# fixed points


@dataclass(frozen=True)
class FixedPointReport:
    """Fixed points of both SE forms plus the residuals tying them together."""

    pseudo_x: float
    pseudo_z: float
    ext_x: float
    ext_z: float
    vse_pseudo_x: float
    vse_post_x: float
    residuals: dict
    dido_status: str
    vse_status: str
    dido_iters: int
    vse_iters: int

    @property
    def max_residual(self):
        return max(abs(v) for v in self.residuals.values())


def _vse_solve(system, max_iters=500, tol=1e-13):
    """Iterate the single-input SE: post = phi(pseudo); pseudo' = breve(post)."""
    spec, clip = system.spectrum, system.clip
    pseudo = system.prior.power
    status = "max_iters"
    it = 0
    # first step mirrors the no-information start: extrinsic = prior power
    post = None
    for it in range(1, max_iters + 1):
        if it == 1:
            u = system.prior.power
            post_ld, _ = _gamma_check_of_u(u, spec, clip, system=system)
            new_pseudo = box_minus(post_ld, u)
        else:
            post = system.phi_se(pseudo)
            try:
                new_pseudo = breve_gamma(post, spec, clip, system=system)
            except BoxMinusError:
                status = "stalled"
                break
            except ValueError:
                # posterior worse than the zero-information ELD output:
                # the decoder extrinsic carries nothing yet (u -> inf),
                # so the next pseudo variance equals the posterior
                new_pseudo = post
        if it > 1 and abs(new_pseudo - pseudo) <= tol * pseudo:
            pseudo = new_pseudo
            status = "converged"
            break
        pseudo = new_pseudo
    if post is None:
        post = system.phi_se(pseudo)
    return pseudo, post, status, it


def se_fixed_point(system, max_iters=20000, tol=1e-13):
    """Solve both SE forms and verify they share the fixed point.

    The residual dict contains the six fixed-point equations (both
    denoisers, both LD outputs, and the two variational-form equations);
    agreement of the two solvers within solver tolerance realizes the
    equivalence of the receiver and its inner-iterative variant.
    """
    states, dido_status = se_trajectory(system, max_iters=max_iters, tol=tol)
    if not states:
        raise RuntimeError("state evolution stalled before completing one iteration")
    st = states[-1]
    vse_pseudo_x, vse_post_x, vse_status, vse_iters = _vse_solve(system, max_iters=1000, tol=tol)

    post_x = system.phi_se(st.pseudo_x)
    post_z = system.psi_se(st.pseudo_z)
    ld = gamma_se_analytic(st.ext_x, st.ext_z, system.spectrum)
    residuals = {
        "nld_x": box_minus(post_x, st.pseudo_x) - st.ext_x,
        "nld_z": box_minus(post_z, st.pseudo_z) - st.ext_z,
        "ld_x": box_minus(ld["x"], st.ext_x) - st.pseudo_x,
        "ld_z": box_minus(ld["z"], st.ext_z) - st.pseudo_z,
        "vse_pseudo_x": vse_pseudo_x - st.pseudo_x,
        "vse_post_x": vse_post_x - post_x,
    }
    return FixedPointReport(
        pseudo_x=st.pseudo_x,
        pseudo_z=st.pseudo_z,
        ext_x=st.ext_x,
        ext_z=st.ext_z,
        vse_pseudo_x=vse_pseudo_x,
        vse_post_x=vse_post_x,
        residuals=residuals,
        dido_status=dido_status,
        vse_status=vse_status,
        dido_iters=len(states),
        vse_iters=vse_iters,
    )
