"""Finite-N receiver: LMMSE linear detector + two MMSE denoisers with
orthogonalization, plus the inner-iterative variant that collapses the
z-side loop into an enhanced linear detector.

Variance bookkeeping is posterior-variance based: each module's
orthogonalization coefficient is its averaged a-posteriori variance
divided by its input pseudo variance, and the extrinsic variance is the
box-minus of the two.  No ground truth enters the recursion; the
trajectory records ground-truth MSEs separately for diagnostics.

Iteration 1 starts from zero pseudo-observations: the prior denoiser is
bypassed (its extrinsic is the prior itself) and the de-clipper runs
against the z prior, which is the same zero-information limit the state
evolution uses.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .denoisers import BoxMinusError, box_minus, circle_minus
from .nonlinearity import clip_complex, declip_posterior_vec
from .state_evolution import gamma_se_analytic

__all__ = [
    "Instance",
    "Trajectory",
    "generate_instance",
    "lmmse_solve",
    "run_goamp",
    "run_ii_goamp",
    "empirical_orthogonality",
]


@dataclass(frozen=True)
class Instance:
    """One realization of the observation model: x, z = A x, y = Q(z + n)."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    seed: int


def generate_instance(op, prior, spec, seed):
    """Draw x from the prior, pass through the channel, clip after AWGN."""
    rng = np.random.default_rng(seed)
    x = prior.sample(op.n, rng)
    z = op.forward(x)
    noise = np.sqrt(spec.sigma2 / 2) * (
        rng.standard_normal(op.m) + 1j * rng.standard_normal(op.m)
    )
    y = clip_complex(z + noise, spec.lam)
    return Instance(x=x, z=z, y=y, seed=seed)


def lmmse_solve(op, x_t, z_t, rho):
    """x_t + A^H (rho I + A A^H)^-1 (z_t - A x_t) via the fast operator."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    residual = np.asarray(z_t, dtype=np.complex128) - op.forward(x_t)
    return np.asarray(x_t, dtype=np.complex128) + op.resolvent_adjoint(residual, rho)


@dataclass
class Trajectory:
    """Per-iteration records of tracked variances, true MSEs and messages.

    rows[k] is a dict for iteration k+1 with tracked pseudo/extrinsic
    variances, ground-truth MSEs of the corresponding vectors, and the
    orthogonality inner products of that iteration.
    """

    rows: list = field(default_factory=list)
    status: str = "running"
    seed: int = 0
    variant: str = "goamp"

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    @property
    def final(self):
        return self.rows[-1]

    def to_csv(self, path_or_buf):
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            buf = open(path_or_buf, "w", newline="")
            close = True
        else:
            buf = path_or_buf
        try:
            buf.write(f"# variant={self.variant}\n# seed={self.seed}\n# status={self.status}\n")
            names = list(self.rows[0].keys())
            writer = csv.DictWriter(buf, fieldnames=names)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: f"{v:.17g}" if isinstance(v, float) else v for k, v in row.items()})
        finally:
            if close:
                buf.close()

    def to_json(self):
        return json.dumps(
            {"variant": self.variant, "seed": self.seed, "status": self.status, "rows": self.rows}
        )


def _mse(a, b):
    return float(np.mean(np.abs(a - b) ** 2))


def _corr(a, b):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(abs(np.vdot(a, b)) / (na * nb))


class _StallSignal(Exception):
    pass


def _nld_x(pseudo_x, pseudo_var_x, prior, t):
    """Prior-denoiser extrinsic; bypassed at t=1 (zero pseudo carries nothing)."""
    n = len(pseudo_x)
    if t == 1:
        return np.zeros(n, dtype=np.complex128), prior.power, prior.power
    post_mean, post_var = prior.posterior(pseudo_x, pseudo_var_x)
    v_hat = float(np.mean(post_var))
    c = v_hat / pseudo_var_x
    if not 0.0 < c < 1.0:
        raise _StallSignal("x-side denoiser did not improve")
    try:
        ext_var = box_minus(v_hat, pseudo_var_x)
    except BoxMinusError as exc:
        raise _StallSignal(str(exc))
    return circle_minus(post_mean, pseudo_x, c), ext_var, v_hat


def _nld_z(pseudo_z, pseudo_var_z, y, spec):
    post_mean, post_var = declip_posterior_vec(pseudo_z, pseudo_var_z, y, spec)
    v_hat = float(np.mean(post_var))
    c = v_hat / pseudo_var_z
    if not 0.0 < c < 1.0:
        raise _StallSignal("z-side denoiser did not improve")
    try:
        ext_var = box_minus(v_hat, pseudo_var_z)
    except BoxMinusError as exc:
        raise _StallSignal(str(exc))
    return circle_minus(post_mean, pseudo_z, c), ext_var, v_hat


def _ld(op, x_t, z_t, vx, vz):
    """Linear detector: LMMSE + orthogonalization on both outputs.

    Coefficients come from the spectral posterior-variance ratios:
    x side 1 - delta*c_gamma, z side c_gamma.
    """
    spec = op.spectrum
    rho = vz / vx
    ld_post = gamma_se_analytic(vx, vz, spec)
    gam = lmmse_solve(op, x_t, z_t, rho)
    c_x = ld_post["x"] / vx
    c_z = ld_post["z"] / vz
    if not (0.0 < c_x < 1.0 and 0.0 < c_z < 1.0):
        raise _StallSignal("linear detector did not improve")
    pseudo_x = circle_minus(gam, x_t, c_x)
    pseudo_z = circle_minus(op.forward(gam), z_t, c_z)
    try:
        pvx = box_minus(ld_post["x"], vx)
        pvz = box_minus(ld_post["z"], vz)
    except BoxMinusError as exc:
        raise _StallSignal(str(exc))
    return pseudo_x, pseudo_z, pvx, pvz


def run_goamp(instance, op, prior, spec, max_iters=20, tol=1e-6, damping=1.0):
    """Iterate NLD (both denoisers) then LD; returns a Trajectory.

    Stops on |Delta v_x| < tol * v_x, max_iters, or a stall (a module's
    posterior variance not improving on its input), which is recorded as
    status 'stalled' rather than raised.  ``damping`` in (0, 1] applies
    geometric damping to the tracked variances (1 = none).
    """
    n, m = op.n, op.m
    zeta = op.spectrum.z_power
    traj = Trajectory(seed=instance.seed, variant="goamp")
    pseudo_x = np.zeros(n, dtype=np.complex128)
    pseudo_z = np.zeros(m, dtype=np.complex128)
    pvx, pvz = prior.power, zeta
    prev_vx = None
    prev_pseudo_x = None
    prev_pseudo_z = None
    for t in range(1, max_iters + 1):
        try:
            x_t, vx, post_vx = _nld_x(pseudo_x, pvx, prior, t)
            z_t, vz, post_vz = _nld_z(pseudo_z, pvz, y=instance.y, spec=spec)
            if damping < 1.0 and prev_vx is not None:
                vx = prev_vx ** (1 - damping) * vx**damping
            new_px, new_pz, new_pvx, new_pvz = _ld(op, x_t, z_t, vx, vz)
        except _StallSignal as sig:
            traj.status = f"stalled: {sig}"
            break
        row = {
            "t": t,
            "pseudo_var_x": pvx,
            "pseudo_var_z": pvz,
            "ext_var_x": vx,
            "ext_var_z": vz,
            "post_var_x": post_vx,
            "post_var_z": post_vz,
            "mse_pseudo_x": _mse(pseudo_x, instance.x) if t > 1 else float(prior.power),
            "mse_pseudo_z": _mse(pseudo_z, instance.z) if t > 1 else zeta,
            "mse_ext_x": _mse(x_t, instance.x),
            "mse_ext_z": _mse(z_t, instance.z),
            # same-iteration products: denoiser input error vs output error
            "orth_x": _corr(pseudo_x - instance.x, instance.x - x_t) if t > 1 else 0.0,
            "orth_z": _corr(instance.z - pseudo_z, z_t - instance.z) if t > 1 else 0.0,
            # cross products: output error at t vs input error at t-1
            "orth_x_cross": _corr(instance.x - x_t, prev_pseudo_x - instance.x) if t > 2 else 0.0,
            "orth_z_cross": _corr(z_t - instance.z, instance.z - prev_pseudo_z) if t > 2 else 0.0,
        }
        traj.rows.append(row)
        prev_pseudo_x, prev_pseudo_z = pseudo_x, pseudo_z
        if not (np.all(np.isfinite(new_px)) and np.all(np.isfinite(new_pz))):
            traj.status = "diverged"
            break
        pseudo_x, pseudo_z = new_px, new_pz
        pvx, pvz = new_pvx, new_pvz
        if prev_vx is not None and abs(vx - prev_vx) < tol * prev_vx:
            traj.status = "converged"
            break
        prev_vx = vx
    if traj.status == "running":
        traj.status = "max_iters"
    return traj


def run_ii_goamp(instance, op, prior, spec, max_outer=20, max_inner=50, tol=1e-6, inner_tol=1e-9):
    """Inner-iterative variant: the z-side denoiser and the LMMSE detector
    iterate to convergence inside an enhanced LD, the prior denoiser only
    in the outer loop.  Same Trajectory contract as :func:`run_goamp`."""
    n, m = op.n, op.m
    zeta = op.spectrum.z_power
    traj = Trajectory(seed=instance.seed, variant="ii-goamp")
    pseudo_x = np.zeros(n, dtype=np.complex128)
    pvx = prior.power
    # inner-state carries over between outer iterations
    pseudo_z = np.zeros(m, dtype=np.complex128)
    pvz = zeta
    prev_vx = None
    for t in range(1, max_outer + 1):
        try:
            x_t, vx, post_vx = _nld_x(pseudo_x, pvx, prior, t)
            inner_used = 0
            post_vz = np.nan
            for _ in range(max_inner):
                z_t, vz, post_vz = _nld_z(pseudo_z, pvz, y=instance.y, spec=spec)
                new_px, new_pz, new_pvx, new_pvz = _ld(op, x_t, z_t, vx, vz)
                inner_used += 1
                delta = abs(new_pvz - pvz) / pvz
                pseudo_z, pvz = new_pz, new_pvz
                if delta < inner_tol:
                    break
        except _StallSignal as sig:
            traj.status = f"stalled: {sig}"
            break
        row = {
            "t": t,
            "pseudo_var_x": pvx,
            "pseudo_var_z": pvz,
            "ext_var_x": vx,
            "ext_var_z": vz,
            "post_var_x": post_vx,
            "post_var_z": post_vz,
            "inner_iters": inner_used,
            "mse_pseudo_x": _mse(pseudo_x, instance.x) if t > 1 else float(prior.power),
            "mse_pseudo_z": _mse(pseudo_z, instance.z),
            "mse_ext_x": _mse(x_t, instance.x),
            "mse_ext_z": _mse(z_t, instance.z),
        }
        traj.rows.append(row)
        pseudo_x, pvx = new_px, new_pvx
        if prev_vx is not None and abs(vx - prev_vx) < tol * prev_vx:
            traj.status = "converged"
            break
        prev_vx = vx
    if traj.status == "running":
        traj.status = "max_iters"
    return traj


def empirical_orthogonality(trajectory):
    """Normalized error inner products per iteration.

    Returns a dict of arrays keyed 'x', 'z' (input-vs-output error of
    each denoiser) and 'x_next', 'z_next' (next input error vs current
    output error); magnitudes vanish as O(1/sqrt(N)).  Iteration 1 is
    excluded for the same-iteration products (zero initialization).
    """
    return {
        "t": trajectory.column("t"),
        "x": trajectory.column("orth_x"),
        "z": trajectory.column("orth_z"),
        "x_cross": trajectory.column("orth_x_cross"),
        "z_cross": trajectory.column("orth_z_cross"),
    }
