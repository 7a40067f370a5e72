"""Variational Dirichlet-process mixture of diagonal Gaussians.

Truncated stick-breaking prior ``v_r ~ Beta(1, alpha)`` (``v_T = 1``) with
Normal-Gamma priors on the per-dimension mean/precision of every
component.  The factorised posterior ``q(v) q(mu, lambda) q(z)`` is fitted
by coordinate ascent on the evidence lower bound; each sweep updates the
global factors from the responsibilities and then the responsibilities,
so the bound never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, digamma, gammaln

from .stats import LOG_2PI, diag_gaussian_logpdf_rows, log_sum_exp_rows

VARIANCE_FLOOR = 1e-6
MAX_TRUNCATION = 20


@dataclass
class VdpGmm:
    """Fitted truncated stick-breaking diagonal Gaussian mixture.

    ``weights``, ``means`` and ``variances`` are posterior-mean point
    summaries of all ``truncation`` components; ``responsibilities`` is
    the N x truncation matrix of ``q(z)``.  ``log_likelihood`` is the
    data log-likelihood of the mixture restricted to the effective
    components (weights renormalised), which is what the subnetwork cost
    uses.
    """

    truncation: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    responsibilities: np.ndarray
    lower_bound: float
    effective_components: int
    log_likelihood: float
    converged: bool
    n_iter: int
    bound_trace: list = field(default_factory=list, repr=False)

    @property
    def hard_labels(self) -> np.ndarray:
        return np.argmax(self.responsibilities, axis=1)

    def effective(self):
        """Indices of components owning at least one hard-assigned sample."""
        used = np.unique(self.hard_labels)
        return used

    def effective_mixture(self):
        """``(weights, means, variances)`` of the effective components with
        weights renormalised to one."""
        idx = self.effective()
        w = self.weights[idx]
        return w / w.sum(), self.means[idx], self.variances[idx]


class _Prior:
    def __init__(self, x, alpha, mean_precision, shape):
        self.alpha = float(alpha)
        self.m0 = x.mean(axis=0)
        var = x.var(axis=0)
        # data-scaled precision prior; degenerate columns fall back to the floor
        var = np.maximum(var, VARIANCE_FLOOR)
        self.k0 = float(mean_precision)
        self.a0 = float(shape)
        self.b0 = self.a0 * var
        self.logb0 = np.log(self.b0)
        self.gammaln_a0 = gammaln(self.a0)
        self.betaln_1a = betaln(1.0, self.alpha)


def _global_update(x, xx, resp, prior):
    nk = resp.sum(axis=0)                                  # R
    sx = resp.T @ x                                        # R x d
    sxx = resp.T @ xx
    kappa = prior.k0 + nk
    m = (prior.k0 * prior.m0 + sx) / kappa[:, None]
    a = np.repeat((prior.a0 + 0.5 * nk)[:, None], x.shape[1], axis=1)
    safe = np.where(nk > 0, nk, 1.0)[:, None]
    xbar = np.where(nk[:, None] > 0, sx / safe, prior.m0)
    scatter = np.maximum(sxx - nk[:, None] * xbar * xbar, 0.0)
    b = prior.b0 + 0.5 * scatter + 0.5 * (prior.k0 * nk / kappa)[:, None] * (xbar - prior.m0) ** 2
    rev_cum = np.cumsum(nk[::-1])[::-1]
    g1 = 1.0 + nk[:-1]
    g2 = prior.alpha + rev_cum[1:]
    # expected log stick weights
    dg = digamma(np.concatenate([g1, g2, g1 + g2]))
    r1 = nk.size - 1
    elog_v = dg[:r1] - dg[2 * r1:]
    elog_1mv = dg[r1:2 * r1] - dg[2 * r1:]
    elog_pi = np.empty(nk.size)
    elog_pi[:-1] = elog_v
    elog_pi[-1] = 0.0
    elog_pi[1:] += np.cumsum(elog_1mv)
    dga = digamma(a)
    logb = np.log(b)
    return dict(nk=nk, kappa=kappa, m=m, a=a, b=b, g1=g1, g2=g2, dg=dg, elog_pi=elog_pi,
                dga=dga, logb=logb, elam=a / b)


def _log_rho(x, q):
    r = x[:, None, :] - q["m"][None, :, :]                          # N x R x d
    quad = np.einsum("nrd,rd->nr", r * r, q["elam"]) + (x.shape[1] / q["kappa"])[None, :]
    ell = 0.5 * (np.sum(q["dga"] - q["logb"], axis=1) - x.shape[1] * LOG_2PI)[None, :] - 0.5 * quad
    return ell, ell + q["elog_pi"][None, :]


def _lower_bound(resp, log_rho, q, prior):
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(np.where(resp > 0, resp * np.log(resp), 0.0))
    data = np.sum(resp * log_rho)
    # stick-breaking KL(Beta(g1, g2) || Beta(1, alpha))
    g1, g2, al = q["g1"], q["g2"], prior.alpha
    r1 = g1.size
    dg = q["dg"]
    kl_v = (prior.betaln_1a - betaln(g1, g2) + (g1 - 1.0) * dg[:r1]
            + (g2 - al) * dg[r1:2 * r1] + (1.0 + al - g1 - g2) * dg[2 * r1:])
    # Normal-Gamma KL per component and dimension
    a, b, m, kappa = q["a"], q["b"], q["m"], q["kappa"][:, None]
    a0, k0 = prior.a0, prior.k0
    kl_mu = 0.5 * (np.log(kappa / k0) + k0 / kappa - 1.0 + k0 * q["elam"] * (m - prior.m0) ** 2)
    kl_lam = ((a - a0) * q["dga"] - gammaln(a) + prior.gammaln_a0
              + a0 * (q["logb"] - prior.logb0) + a * (prior.b0 - b) / b)
    return float(data + ent - np.sum(kl_v) - np.sum(kl_mu) - np.sum(kl_lam))


def _kmeanspp_resp(x, k, rng, n_comp):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            break
        c = x[rng.choice(n, p=d2 / tot)]
        centers.append(c)
        d2 = np.minimum(d2, np.sum((x - c) ** 2, axis=1))
    c = np.asarray(centers)
    lab = np.argmin(((x[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
    resp = np.zeros((n, n_comp))
    resp[np.arange(n), lab] = 1.0
    return resp


def _fit_once(x, prior, truncation, init_resp, tol, max_iter):
    resp = init_resp
    trace = []
    converged = False
    q = None
    xx = x * x
    for it in range(1, max_iter + 1):
        q = _global_update(x, xx, resp, prior)
        _, log_rho = _log_rho(x, q)
        resp = np.exp(log_rho - log_sum_exp_rows(log_rho)[:, None])
        resp /= resp.sum(axis=1, keepdims=True)
        lb = _lower_bound(resp, log_rho, q, prior)
        trace.append(lb)
        if it > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    return q, resp, trace, converged


def _summarise(x, q, resp, trace, converged, truncation):
    e_v = q["g1"] / (q["g1"] + q["g2"])
    w = np.concatenate([e_v, [1.0]]) * np.concatenate([[1.0], np.cumprod(1.0 - e_v)])
    w = w / w.sum()
    var = np.maximum(q["b"] / q["a"], VARIANCE_FLOOR)
    model = VdpGmm(truncation=truncation, weights=w, means=q["m"].copy(), variances=var,
                   responsibilities=resp, lower_bound=trace[-1],
                   effective_components=0, log_likelihood=0.0, converged=converged,
                   n_iter=len(trace), bound_trace=trace)
    idx = model.effective()
    model.effective_components = int(idx.size)
    ew, em, ev = model.effective_mixture()
    lp = diag_gaussian_logpdf_rows(x, em, ev) + np.log(ew)[None, :]
    model.log_likelihood = float(np.sum(log_sum_exp_rows(lp)))
    return model


def fit_vdp_gmm(data, concentration=1.0, truncation=None, tol=1e-8, max_iter=500,
                restarts=3, seed=0, init_components=None, mean_precision=1e-2,
                precision_shape=1.0) -> VdpGmm:
    """Fit a truncated Dirichlet-process mixture of diagonal Gaussians.

    Parameters
    ----------
    data : array-like, shape (N, d)
        Samples in rows.
    concentration : float
        Stick-breaking concentration ``alpha``.
    truncation : int, optional
        Number of stick pieces; defaults to ``min(N, 20)``.
    tol : float
        Stop when the bound changes by less than ``tol`` relative to its
        magnitude (absolute below 1).
    restarts : int
        Number of k-means++ initialisations; the highest bound wins.
    seed : int
        Seeds the initialisations, one sub-stream per restart.

    Returns
    -------
    VdpGmm
    """
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if dim < 1:
        raise ValueError("need at least one dimension")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    if truncation is None:
        truncation = min(n, MAX_TRUNCATION)
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    if init_components is None:
        init_components = min(truncation, 8)
    prior = _Prior(x, concentration, mean_precision, precision_shape)
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        rng = np.random.Generator(np.random.PCG64(child))
        k0 = int(rng.integers(1, init_components + 1)) if restarts > 1 else init_components
        resp0 = _kmeanspp_resp(x, max(1, min(k0, truncation)), rng, truncation)
        q, resp, trace, conv = _fit_once(x, prior, truncation, resp0, tol, max_iter)
        if best is None or trace[-1] > best[2][-1]:
            best = (q, resp, trace, conv)
    return _summarise(x, *best, truncation)
