"""Independent reference implementations used only by the test suite.

These deliberately avoid the package's own algorithms: density evolution
is run on sampled message populations (no Gaussian assumption), and the
de-clipping posterior is integrated on a dense grid.
"""

import numpy as np
from scipy.stats import norm


def declip_posterior_grid(pseudo_r, pseudo_var_r, y_r, sigma2_r, lam, n_grid=400_001, span=12.0):
    """Dense-grid posterior (mean, var) for one real component.

    pseudo_var_r and sigma2_r are the per-real-component variances.
    """
    sd = np.sqrt(pseudo_var_r)
    z = np.linspace(pseudo_r - span * max(sd, 1.0), pseudo_r + span * max(sd, 1.0), n_grid)
    prior = np.exp(-((z - pseudo_r) ** 2) / (2 * pseudo_var_r))
    if np.isinf(lam) or abs(y_r) < lam:
        lik = np.exp(-((y_r - z) ** 2) / (2 * sigma2_r))
    elif y_r >= lam:
        lik = norm.sf((lam - z) / np.sqrt(sigma2_r))
    else:
        lik = norm.cdf((-lam - z) / np.sqrt(sigma2_r))
    p = prior * lik
    total = np.trapezoid(p, z)
    mean = np.trapezoid(z * p, z) / total
    var = np.trapezoid((z - mean) ** 2 * p, z) / total
    return mean, var


def _degree_counts(degrees, fractions, total):
    counts = np.floor(np.asarray(fractions) * total).astype(int)
    counts[-1] = total - counts[:-1].sum()
    return counts


def _combine_sum(pool, degrees, fractions, n_out, rng, minus_one=True):
    """Per-edge sums of (d-1) (or d) random draws from ``pool``, degree-grouped."""
    counts = _degree_counts(degrees, fractions, n_out)
    out = np.empty(n_out)
    pos = 0
    for d, c in zip(degrees, counts):
        k = int(d) - 1 if minus_one else int(d)
        if c == 0:
            continue
        if k == 0:
            out[pos : pos + c] = 0.0
        else:
            picks = pool[rng.integers(0, len(pool), size=(c, k))]
            out[pos : pos + c] = picks.sum(axis=1)
        pos += c
    rng.shuffle(out)
    return out


def _combine_tanh(pool, degrees, fractions, n_out, rng):
    """Per-edge check combination 2*atanh(prod tanh(m/2)) with d-1 inputs."""
    counts = _degree_counts(degrees, fractions, n_out)
    out = np.empty(n_out)
    pos = 0
    half = np.tanh(0.5 * np.clip(pool, -60.0, 60.0))
    for d, c in zip(degrees, counts):
        k = int(d) - 1
        if c == 0:
            continue
        picks = half[rng.integers(0, len(pool), size=(c, k))]
        prod = picks.prod(axis=1)
        out[pos : pos + c] = 2.0 * np.arctanh(np.clip(prod, -1 + 1e-15, 1 - 1e-15))
        pos += c
    rng.shuffle(out)
    return out


class PopulationDE:
    """Sampled-density evolution for a binary LDPC code on a symmetric
    Gaussian channel with LLR mean mu_channel (variance 2*mu_channel).

    No Gaussian assumption on the evolved messages: check updates use
    the exact tanh rule on sampled populations.
    """

    def __init__(self, dist, mu_channel, n_pop=400_000, seed=0):
        self.rng = np.random.default_rng(seed)
        self.mu = mu_channel
        self.n_pop = n_pop
        self.vn_deg = np.array(sorted(dist.vn_edge))
        self.vn_frac = np.array([dist.vn_edge[int(d)] for d in self.vn_deg])
        self.cn_deg = np.array(sorted(dist.cn_edge))
        self.cn_frac = np.array([dist.cn_edge[int(d)] for d in self.cn_deg])
        self.node_frac = np.array([dist.vn_node_fractions[int(d)] for d in self.vn_deg])
        self.msg = self._channel(n_pop)
        self.chk = None

    def _channel(self, n):
        return self.rng.normal(self.mu, np.sqrt(2 * self.mu), n)

    def iterate(self, n_iters):
        for _ in range(n_iters):
            self.chk = _combine_tanh(self.msg, self.cn_deg, self.cn_frac, self.n_pop, self.rng)
            sums = _combine_sum(self.chk, self.vn_deg, self.vn_frac, self.n_pop, self.rng)
            self.msg = self._channel(self.n_pop) + sums

    def app_population(self):
        sums = _combine_sum(
            self.chk, self.vn_deg, self.node_frac, self.n_pop, self.rng, minus_one=False
        )
        return self._channel(self.n_pop) + sums

    def error_prob(self):
        return float(np.mean(self.app_population() < 0))

    def mmse(self):
        app = self.app_population()
        return float(np.mean(1.0 - np.tanh(0.5 * np.clip(app, -60, 60)) ** 2))


def population_de_bits(dist, mu_channel, n_pop=400_000, max_iters=400, seed=0,
                       target_pe=1e-5, check_every=10):
    """Run sampled DE until the error probability drops below target_pe
    or the iteration budget runs out.  Returns (decoded, final_pe)."""
    de = PopulationDE(dist, mu_channel, n_pop=n_pop, seed=seed)
    done = 0
    while done < max_iters:
        step = min(check_every, max_iters - done)
        de.iterate(step)
        done += step
        pe = de.error_prob()
        if pe < target_pe:
            return True, pe
    return False, pe
