"""Unitarily-invariant channel with a geometric singular-value profile.

The measurement matrix is realized as A = F1 P1 L P2 F2 where F1, F2 are
unitary DFT matrices (sizes m and n), P1, P2 seeded random permutations
and L the m-by-n rectangular diagonal of singular values.  Applying A or
its adjoint costs O((m+n) log(m+n)); the resolvent (rho I + A A^H)^-1 is
diagonal in the transform domain.

The spectral trace terms used by the LMMSE transfer functions are exposed
via :func:`spectral_lmmse_terms`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChannelSpectrum",
    "ChannelOperator",
    "build_spectrum",
    "spectral_lmmse_terms",
]


@dataclass(frozen=True)
class ChannelSpectrum:
    """Singular values of an m-by-n channel with condition parameter kappa.

    Consecutive singular values fall off geometrically,
    d_i / d_{i+1} = kappa**(1/T) with T = min(m, n), and the profile is
    normalized so that sum(d_i^2) = max(m, n).
    """

    m: int
    n: int
    kappa: float
    singular_values: np.ndarray

    @property
    def rank(self):
        return min(self.m, self.n)

    @property
    def delta(self):
        """Aspect ratio m/n (coefficient of the LD x-side orthogonalization)."""
        return self.m / self.n

    @property
    def z_power(self):
        """Per-component variance of z = A x for unit-power x: sum(d^2)/m."""
        return float(np.sum(self.singular_values**2)) / self.m

    def to_json(self, seed=None):
        return json.dumps(
            {
                "m": self.m,
                "n": self.n,
                "kappa": self.kappa,
                "seed": seed,
                "singular_values": self.singular_values.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(
            m=int(obj["m"]),
            n=int(obj["n"]),
            kappa=float(obj["kappa"]),
            singular_values=np.asarray(obj["singular_values"], dtype=float),
        )


def build_spectrum(m, n, kappa):
    """Geometric singular-value profile, normalized to sum(d^2) = max(m, n).

    d_i = c * kappa**((T - i)/T), i = 1..T, T = min(m, n).
    """
    m = int(m)
    n = int(n)
    kappa = float(kappa)
    if m < 1 or n < 1:
        raise ValueError("dimensions must be positive")
    if kappa < 1.0 or not np.isfinite(kappa):
        raise ValueError(f"condition parameter must satisfy kappa >= 1, got {kappa}")
    t = min(m, n)
    j = max(m, n)
    d = kappa ** ((t - np.arange(1, t + 1)) / t)
    d *= np.sqrt(j / np.sum(d * d))
    return ChannelSpectrum(m=m, n=n, kappa=kappa, singular_values=d)


def spectral_lmmse_terms(spec, rho):
    """Trace terms of the resolvent (rho I + A A^H)^-1 at precision ratio rho.

    Returns a dict with:
      c_gamma            (1/m) sum d^2/(rho + d^2)   -- z-side posterior ratio
      post_var_x_factor  (1/n) (n - sum d^2/(rho+d^2)) = 1 - delta*c_gamma
      post_var_z_factor  (rho/m) sum d^2/(rho + d^2)  -- multiplies v_x
    """
    rho = float(rho)
    if rho <= 0:
        raise ValueError("rho must be positive")
    d2 = spec.singular_values**2
    s = float(np.sum(d2 / (rho + d2)))
    c_gamma = s / spec.m
    return {
        "c_gamma": c_gamma,
        "post_var_x_factor": (spec.n - s) / spec.n,
        "post_var_z_factor": rho * s / spec.m,
    }


def _apply_permutation(vec, perm):
    return vec[perm]


def _apply_permutation_t(vec, perm, out):
    out[perm] = vec
    return out


@dataclass(frozen=True)
class ChannelOperator:
    """Seeded fast realization of A = F1 P1 L P2 F2 and its adjoint.

    Permutations are drawn from numpy's PCG64 generator (Fisher-Yates)
    at the given seed; construction is deterministic and the operator is
    immutable, so applications are reentrant.
    """

    spectrum: ChannelSpectrum
    seed: int
    _p1: np.ndarray = field(repr=False, default=None)
    _p2: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        object.__setattr__(self, "_p1", rng.permutation(self.spectrum.m))
        object.__setattr__(self, "_p2", rng.permutation(self.spectrum.n))

    @property
    def m(self):
        return self.spectrum.m

    @property
    def n(self):
        return self.spectrum.n

    def _lambda_apply(self, v):
        # rectangular diagonal: n-vector -> m-vector
        t = self.spectrum.rank
        out = np.zeros(self.m, dtype=np.complex128)
        out[:t] = v[:t] * self.spectrum.singular_values
        return out

    def _lambda_t_apply(self, v):
        t = self.spectrum.rank
        out = np.zeros(self.n, dtype=np.complex128)
        out[:t] = v[:t] * self.spectrum.singular_values
        return out

    def forward(self, x):
        """A @ x for a length-n complex vector."""
        x = np.asarray(x, dtype=np.complex128)
        if x.shape != (self.n,):
            raise ValueError(f"expected length-{self.n} vector, got shape {x.shape}")
        t = np.fft.fft(x, norm="ortho")
        t = _apply_permutation(t, self._p2)
        t = self._lambda_apply(t)
        t = _apply_permutation(t, self._p1)
        return np.fft.fft(t, norm="ortho")

    def adjoint(self, u):
        """A^H @ u for a length-m complex vector."""
        u = np.asarray(u, dtype=np.complex128)
        if u.shape != (self.m,):
            raise ValueError(f"expected length-{self.m} vector, got shape {u.shape}")
        t = np.fft.ifft(u, norm="ortho")
        t = _apply_permutation_t(t, self._p1, np.empty(self.m, dtype=np.complex128))
        t = self._lambda_t_apply(t)
        t = _apply_permutation_t(t, self._p2, np.empty(self.n, dtype=np.complex128))
        return np.fft.ifft(t, norm="ortho")

    def resolvent_adjoint(self, r, rho):
        """A^H (rho I + A A^H)^-1 @ r, the LMMSE correction kernel.

        Diagonal in the transform domain: singular direction i is scaled
        by d_i / (rho + d_i^2).
        """
        if rho <= 0:
            raise ValueError("rho must be positive")
        r = np.asarray(r, dtype=np.complex128)
        if r.shape != (self.m,):
            raise ValueError(f"expected length-{self.m} vector, got shape {r.shape}")
        d = self.spectrum.singular_values
        t = np.fft.ifft(r, norm="ortho")
        s = np.empty(self.m, dtype=np.complex128)
        s[self._p1] = t
        out = np.zeros(self.n, dtype=np.complex128)
        out[: self.spectrum.rank] = s[: self.spectrum.rank] * (d / (rho + d * d))
        w = np.empty(self.n, dtype=np.complex128)
        w[self._p2] = out
        return np.fft.ifft(w, norm="ortho")

    def dense(self):
        """Materialize A as a dense m-by-n matrix (small n only)."""
        a = np.empty((self.m, self.n), dtype=np.complex128)
        e = np.zeros(self.n, dtype=np.complex128)
        for j in range(self.n):
            e[j] = 1.0
            a[:, j] = self.forward(e)
            e[j] = 0.0
        return a


def apply_forward(op, x):
    """Functional alias for :meth:`ChannelOperator.forward`."""
    return op.forward(x)


def apply_adjoint(op, u):
    """Functional alias for :meth:`ChannelOperator.adjoint`."""
    return op.adjoint(u)
