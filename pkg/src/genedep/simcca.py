"""Probabilistic CCA with a matrix-normal prior tying the two loadings.

Two centred views share a Gaussian latent ``z ~ N(0, I_k)``::

    x = W_x z + e_x,   e_x ~ N(0, Psi_x)
    y = W_y z + e_y,   e_y ~ N(0, Psi_y),   W_y = T W_x

and ``T`` has a matrix-normal prior with mean ``M`` and isotropic
row/column covariances, giving the objective (to minimise)::

    log|Sigma| + tr(Sigma^-1 S) + ||T - M||_F^2 / (2 sigma_T2)

with ``Sigma = W W' + blockdiag(Psi_x, Psi_y)`` and ``S`` the joint sample
covariance.  ``sigma_T2 = inf`` is ordinary probabilistic CCA (closed
form), ``sigma_T2 = 0`` pins ``T = M``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .dataio import ExpressionMatrix, PositionTable, encode_float, register_record

JITTER = 1e-6
MIN_EIG = 1e-9
DEFAULT_WINDOW = 10


class ConstraintError(ValueError):
    """``T`` differs from ``M`` under a fully regularised prior."""


@dataclass
class PairedData:
    """Two views ``X`` (dx x N) and ``Y`` (dy x N) of the same samples."""

    x: np.ndarray
    y: np.ndarray
    sample_ids: list = None
    x_ids: list = None
    y_ids: list = None
    centered: bool = False

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[1] != self.y.shape[1]:
            raise ValueError("X and Y must have the same number of samples")
        if not self.centered:
            self.x = self.x - self.x.mean(axis=1, keepdims=True)
            self.y = self.y - self.y.mean(axis=1, keepdims=True)
            self.centered = True

    @classmethod
    def from_matrices(cls, x: ExpressionMatrix, y: ExpressionMatrix) -> "PairedData":
        if x.sample_ids != y.sample_ids:
            raise ValueError("X and Y must list the same samples in the same order")
        return cls(x.values, y.values, list(x.sample_ids), list(x.feature_ids),
                   list(y.feature_ids))

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def dx(self) -> int:
        return self.x.shape[0]

    @property
    def dy(self) -> int:
        return self.y.shape[0]

    def covariance(self) -> np.ndarray:
        z = np.vstack([self.x, self.y])
        return z @ z.T / self.n


@dataclass
class SimCcaPrior:
    """Matrix-normal prior on ``T``: mean ``M`` and variance ``sigma_t2``."""

    m: np.ndarray
    sigma_t2: float = math.inf

    def __post_init__(self):
        self.m = np.atleast_2d(np.asarray(self.m, dtype=float))
        self.sigma_t2 = float(self.sigma_t2)
        if not self.sigma_t2 >= 0:
            raise ValueError("sigma_t2 must be >= 0")

    @classmethod
    def identity(cls, dim, sigma_t2=math.inf) -> "SimCcaPrior":
        return cls(np.eye(dim), sigma_t2)

    def penalty(self, t) -> float:
        if math.isinf(self.sigma_t2):
            return 0.0
        if self.sigma_t2 == 0.0:
            if not np.array_equal(t, self.m):
                raise ConstraintError("sigma_t2 = 0 requires T == M exactly")
            return 0.0
        return float(np.sum((t - self.m) ** 2)) / (2.0 * self.sigma_t2)


@dataclass
class SimCcaOptions:
    max_iter: int = 500
    tol: float = 1e-8
    inner_max_iter: int = 200
    inner_gtol: float = 1e-6


@register_record("simcca_model")
@dataclass
class SimCcaModel:
    """Fitted loadings, coupling matrix and noise covariances.

    ``wy`` is always ``t @ wx``.  ``trace`` holds the objective after
    initialisation and after every EM iteration.
    """

    wx: np.ndarray
    t: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    trace: list = field(default_factory=list, repr=False)
    converged: bool = True

    @property
    def wy(self) -> np.ndarray:
        return self.t @ self.wx

    @property
    def k(self) -> int:
        return self.wx.shape[1]

    @property
    def w(self) -> np.ndarray:
        return np.vstack([self.wx, self.wy])

    @property
    def psi(self) -> np.ndarray:
        return linalg.block_diag(self.psi_x, self.psi_y)

    def sigma(self) -> np.ndarray:
        w = self.w
        return w @ w.T + self.psi

    def to_record(self) -> dict:
        return {"k": self.k, "W_x": self.wx.tolist(), "T": self.t.tolist(),
                "W_y": self.wy.tolist(), "Psi_x": self.psi_x.tolist(),
                "Psi_y": self.psi_y.tolist(), "converged": self.converged,
                "objective": [encode_float(v) for v in self.trace]}

    @classmethod
    def from_record(cls, r: dict) -> "SimCcaModel":
        arr = lambda key: np.asarray(r[key], dtype=float)  # noqa: E731
        return cls(arr("W_x"), arr("T"), arr("Psi_x"), arr("Psi_y"),
                   [float(v) for v in r["objective"]], bool(r["converged"]))


def _chol_logdet(a):
    try:
        c = linalg.cholesky(a, lower=True)
    except linalg.LinAlgError:
        raise linalg.LinAlgError("covariance is singular: jitter required") from None
    return c, 2.0 * float(np.sum(np.log(np.diag(c))))


def _fix_psd(a):
    a = 0.5 * (a + a.T)
    if np.linalg.eigvalsh(a)[0] < MIN_EIG:
        a = a + JITTER * np.eye(a.shape[0])
    return a


def simcca_objective(model: SimCcaModel, data: PairedData, prior: SimCcaPrior) -> float:
    """Regularised negative log-likelihood (constants dropped)."""
    s = data.covariance()
    c, logdet = _chol_logdet(model.sigma())
    tr = float(np.trace(linalg.cho_solve((c, True), s)))
    return logdet + tr + prior.penalty(model.t)


def _inv_sqrt(a):
    vals, vecs = np.linalg.eigh(a)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _classical_ml(s, dx, k):
    """Closed-form maximum-likelihood probabilistic CCA."""
    sxx, syy, sxy = s[:dx, :dx], s[dx:, dx:], s[:dx, dx:]
    ix, iy = _inv_sqrt(sxx), _inv_sqrt(syy)
    u, rho, vt = np.linalg.svd(ix @ sxy @ iy)
    rho = np.minimum(rho[:k], 1.0 - 1e-12)
    root = np.sqrt(rho)
    wx = sxx @ ix @ u[:, :k] * root
    wy = syy @ iy @ vt[:k].T * root
    return wx, wy


def _coupling_for(wx, wy, m):
    # least-change coupling: T = M + (W_y - M W_x) W_x^+
    return m + (wy - m @ wx) @ np.linalg.pinv(wx)


def _estep(model, s):
    w = model.w
    c, _ = _chol_logdet(model.sigma())
    beta = linalg.cho_solve((c, True), w).T               # k x D
    a = beta @ s                                          # E[z x'] averaged
    b = np.eye(model.k) - beta @ w + a @ beta.T           # E[z z'] averaged
    return a, 0.5 * (b + b.T)


def _residual_cov(w, a, b, s):
    wa = w @ a
    return s - wa - wa.T + w @ b @ w.T


def _w_surrogate(wx, t, px, py, ax, ay, b, prior):
    wy = t @ wx
    f = (-2.0 * np.sum(px * (wx @ ax).T) + np.sum(px * (wx @ b @ wx.T))
         - 2.0 * np.sum(py * (wy @ ay).T) + np.sum(py * (wy @ b @ wy.T)))
    gy = 2.0 * (py @ wy @ b - py @ ay.T)
    gx = 2.0 * (px @ wx @ b - px @ ax.T) + t.T @ gy
    gt = gy @ wx.T
    if not math.isinf(prior.sigma_t2):
        f += float(np.sum((t - prior.m) ** 2)) / (2.0 * prior.sigma_t2)
        gt = gt + (t - prior.m) / prior.sigma_t2
    return f, gx, gt


def _mstep(model, a, b, s, prior, opts, dx):
    px = linalg.inv(model.psi_x)
    py = linalg.inv(model.psi_y)
    px, py = 0.5 * (px + px.T), 0.5 * (py + py.T)
    ax, ay = a[:, :dx], a[:, dx:]
    binv = linalg.inv(b)
    if math.isinf(prior.sigma_t2):
        w = a.T @ binv
        wx = w[:dx]
        t = _coupling_for(wx, w[dx:], prior.m)
    elif prior.sigma_t2 == 0.0:
        t = prior.m
        lhs = px + t.T @ py @ t
        wx = linalg.solve(lhs, px @ ax.T + t.T @ py @ ay.T) @ binv
    else:
        wx, t = model.wx, model.t
        shp_x, shp_t = wx.shape, t.shape
        nx = wx.size

        def fun(theta):
            f, gx, gt = _w_surrogate(theta[:nx].reshape(shp_x), theta[nx:].reshape(shp_t),
                                     px, py, ax, ay, b, prior)
            return f, np.concatenate([gx.ravel(), gt.ravel()])

        x0 = np.concatenate([wx.ravel(), t.ravel()])
        f0 = fun(x0)[0]
        res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                                options={"maxiter": opts.inner_max_iter, "gtol": opts.inner_gtol})
        if res.fun <= f0:
            wx, t = res.x[:nx].reshape(shp_x), res.x[nx:].reshape(shp_t)
    new = SimCcaModel(wx, t, model.psi_x, model.psi_y)
    c = _residual_cov(new.w, a, b, s)
    new.psi_x = _fix_psd(c[:dx, :dx])
    new.psi_y = _fix_psd(c[dx:, dx:])
    return new


def _init_model(data, k, prior):
    s = data.covariance()
    dx = data.dx
    if math.isinf(prior.sigma_t2):
        wx, wy = _classical_ml(s, dx, k)
        t = _coupling_for(wx, wy, prior.m)
    else:
        u, sv, vt = np.linalg.svd(s[:dx, dx:])
        wx = u[:, :k] * np.sqrt(sv[:k])
        t = prior.m.copy()
    model = SimCcaModel(wx, t, np.eye(dx), np.eye(data.dy))
    c = s - model.w @ model.w.T
    for blk, sl in (("psi_x", slice(0, dx)), ("psi_y", slice(dx, None))):
        r = 0.5 * (c[sl, sl] + c[sl, sl].T)
        vals, vecs = np.linalg.eigh(r)
        floor = 1e-2 * float(np.mean(np.diag(s[sl, sl])))
        setattr(model, blk, (vecs * np.maximum(vals, floor)) @ vecs.T)
    return model


def simcca_fit(data: PairedData, k=None, prior: SimCcaPrior = None,
               opts: SimCcaOptions = None) -> SimCcaModel:
    """Fit the similarity-constrained probabilistic CCA model by EM.

    Each iteration computes the latent posterior moments (E-step), then
    updates the loadings with the noise fixed and the noise with the new
    loadings (conditional M-steps), so the objective never increases.
    The loading update is closed form at ``sigma_t2`` = 0 or inf and uses
    L-BFGS with an analytic gradient otherwise.
    """
    opts = opts or SimCcaOptions()
    if k is None:
        k = min(data.dx, data.dy)
    if data.n <= k:
        raise ValueError(f"need more samples than latent dimensions (N={data.n}, k={k})")
    if k > data.dx:
        raise ValueError("latent dimension exceeds dx")
    if prior is None:
        if data.dx != data.dy:
            raise ValueError("prior mean M must be given when dx != dy")
        prior = SimCcaPrior.identity(data.dx)
    if prior.m.shape != (data.dy, data.dx):
        raise ValueError(f"prior mean must be {data.dy} x {data.dx}")
    s = data.covariance()
    model = _init_model(data, k, prior)
    obj = simcca_objective(model, data, prior)
    trace = [obj]
    converged = False
    for _ in range(opts.max_iter):
        a, b = _estep(model, s)
        model = _mstep(model, a, b, s, prior, opts, data.dx)
        new = simcca_objective(model, data, prior)
        trace.append(new)
        if abs(obj - new) <= opts.tol * max(1.0, abs(new)):
            converged = True
            obj = new
            break
        obj = new
    model.trace = trace
    model.converged = converged
    return model


def canonical_correlations(sigma: np.ndarray, dx: int) -> np.ndarray:
    """Canonical correlations of a joint covariance matrix, descending."""
    ix = _inv_sqrt(sigma[:dx, :dx])
    iy = _inv_sqrt(sigma[dx:, dx:])
    return np.linalg.svd(ix @ sigma[:dx, dx:] @ iy, compute_uv=False)


def dependency_score(model: SimCcaModel, data: PairedData = None, method="ratio") -> float:
    """Strength of the shared signal relative to the view-specific noise.

    ``method="ratio"`` returns ``tr(W W') / tr(Psi)``.  ``method="lr"``
    returns the per-sample log-likelihood ratio of the fitted model against
    independent views (requires ``data``).
    """
    if method == "ratio":
        w = model.w
        return float(np.sum(w * w) / (np.trace(model.psi_x) + np.trace(model.psi_y)))
    if method == "lr":
        if data is None:
            raise ValueError("likelihood-ratio score needs the data")
        s = data.covariance()
        dx = data.dx
        indep = (np.linalg.slogdet(s[:dx, :dx])[1] + np.linalg.slogdet(s[dx:, dx:])[1]
                 + s.shape[0])
        c, logdet = _chol_logdet(model.sigma())
        fitted = logdet + float(np.trace(linalg.cho_solve((c, True), s)))
        return 0.5 * (indep - fitted)
    raise ValueError(f"unknown score method {method!r}")


def latent_z(model: SimCcaModel, data: PairedData) -> np.ndarray:
    """Posterior mean of the latent variable for every sample (k x N)."""
    if data.dx != model.wx.shape[0] or data.dy != model.psi_y.shape[0]:
        raise ValueError("data dimensions do not match the model")
    c, _ = _chol_logdet(model.sigma())
    obs = np.vstack([data.x, data.y])
    return model.w.T @ linalg.cho_solve((c, True), obs)


# ---------------------------------------------------------------------------
# correlation-based variant

@dataclass
class ProjectionPair:
    vx: np.ndarray
    vy: np.ndarray
    correlation: float


def _regularised(a, name):
    a = 0.5 * (a + a.T)
    if np.linalg.eigvalsh(a)[0] < MIN_EIG:
        warnings.warn(f"{name} covariance is rank deficient; adding {JITTER:g} jitter",
                      RuntimeWarning, stacklevel=3)
        a = a + JITTER * np.eye(a.shape[0])
    return a


def _classical_cca(sxx, syy, sxy, components):
    lx = linalg.cholesky(sxx, lower=True)
    ly = linalg.cholesky(syy, lower=True)
    k = linalg.solve_triangular(lx, linalg.solve_triangular(ly, sxy.T, lower=True).T, lower=True)
    u, rho, vt = np.linalg.svd(k)
    out = []
    for i in range(components):
        vx = linalg.solve_triangular(lx.T, u[:, i], lower=False)
        vy = linalg.solve_triangular(ly.T, vt[i], lower=False)
        out.append(ProjectionPair(vx, vy, float(rho[i])))
    return out


def _coupled_corr(u, basis, c, a, b):
    v = basis @ u
    num = v @ c @ v
    va, vb = v @ a @ v, v @ b @ v
    f = num / math.sqrt(va * vb)
    g = 2.0 * c @ v / math.sqrt(va * vb) - f * (a @ v / va + b @ v / vb)
    return -f, -(basis.T @ g)


def constrained_cca(data: PairedData, t_fixed=None, components=1, unconstrained=False, seed=0,
                    n_starts=8):
    """Projection pairs ``(v_x, v_y = T v_x)`` of maximal correlation.

    Later components are searched in the ``S_xx``-orthogonal complement of
    the earlier ``v_x``, so their projections of ``X`` are uncorrelated.
    With ``unconstrained=True`` the coupling is dropped and classical CCA
    is returned.
    """
    s = data.covariance()
    dx = data.dx
    sxx = _regularised(s[:dx, :dx], "X")
    syy = _regularised(s[dx:, dx:], "Y")
    sxy = s[:dx, dx:]
    if components > dx:
        raise ValueError("components must not exceed dx")
    if unconstrained:
        return _classical_cca(sxx, syy, sxy, components)
    t = np.asarray(t_fixed, dtype=float)
    if t.shape != (data.dy, dx):
        raise ValueError(f"T must be {data.dy} x {dx}")
    c = 0.5 * (sxy @ t + t.T @ sxy.T)
    bmat = _regularised(t.T @ syy @ t, "T'YY'T")
    rng = np.random.default_rng(seed)
    found = []
    for _ in range(components):
        if found:
            cons = np.array([sxx @ p.vx for p in found])
            basis = linalg.null_space(cons)
        else:
            basis = np.eye(dx)
        starts = [basis.T @ p.vx for p in _classical_cca(sxx, syy, sxy, 1)]
        starts += [basis.T @ e for e in np.linalg.eigh(c)[1].T[::-1][:2]]
        starts += list(rng.standard_normal((n_starts, basis.shape[1])))
        best = None
        for u0 in starts:
            if np.linalg.norm(basis @ u0) < 1e-12:
                continue
            res = optimize.minimize(_coupled_corr, u0, args=(basis, c, sxx, bmat), jac=True,
                                    method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
            if best is None or res.fun < best.fun:
                best = res
        v = basis @ best.x
        v = v / math.sqrt(v @ sxx @ v)
        found.append(ProjectionPair(v, t @ v, float(-best.fun)))
    return found


# ---------------------------------------------------------------------------
# sliding-window screen

@register_record("window_score")
@dataclass
class WindowScore:
    """Dependency score of the window of features around one anchor."""

    anchor: str
    members: list
    score: float
    chromosome: str = None
    k: int = None
    sigma_t2: float = None
    objective: float = None

    def to_record(self) -> dict:
        return {"anchor": self.anchor, "chromosome": self.chromosome, "members": self.members,
                "score": self.score, "k": self.k, "sigma_t2": encode_float(self.sigma_t2),
                "objective": self.objective}

    @classmethod
    def from_record(cls, r: dict) -> "WindowScore":
        return cls(r["anchor"], list(r["members"]), float(r["score"]), r.get("chromosome"),
                   r.get("k"), float(r["sigma_t2"]), r.get("objective"))


def window_members(order, coords, i, d):
    """The ``d`` features closest to ``order[i]`` on one chromosome.

    Distance ties break towards the lower coordinate.  Returned in
    coordinate order.
    """
    c0 = coords[i]
    ranked = sorted(range(len(order)), key=lambda j: (abs(coords[j] - c0), coords[j], order[j]))
    picked = sorted(ranked[:d], key=lambda j: (coords[j], order[j]))
    return [order[j] for j in picked]


def genome_screen(x: ExpressionMatrix, y: ExpressionMatrix, positions: PositionTable,
                  window=DEFAULT_WINDOW, k=None, prior: SimCcaPrior = None,
                  opts: SimCcaOptions = None, n_jobs=1, score_method="ratio", skipped=None):
    """Score every anchor feature by the dependency within its window.

    For each anchor, the ``window`` closest features on the same
    chromosome (present in both views) form a constant-size window; the
    two views restricted to it are fitted with :func:`simcca_fit` and
    scored with :func:`dependency_score`.  The default prior pins
    ``T = I``: the two views measure the same features, so their loadings
    are expected to agree.  Chromosomes with fewer than
    ``window`` features are skipped with a warning (their names are
    appended to ``skipped`` if given).

    Returns the window scores sorted by decreasing score.
    """
    if x.sample_ids != y.sample_ids:
        raise ValueError("X and Y must list the same samples in the same order")
    shared = set(x.feature_ids) & set(y.feature_ids)
    k = window if k is None else k
    if prior is None:
        prior = SimCcaPrior.identity(window, 0.0)
    xrow = {f: i for i, f in enumerate(x.feature_ids)}
    yrow = {f: i for i, f in enumerate(y.feature_ids)}
    jobs = []
    for chrom, feats in positions.chromosomes().items():
        feats = [f for f in feats if f in shared]
        if len(feats) < window:
            warnings.warn(f"chromosome {chrom!r} has {len(feats)} features < window {window}; "
                          "skipped", RuntimeWarning, stacklevel=2)
            if skipped is not None:
                skipped.append(chrom)
            continue
        coords = [positions[f][1] for f in feats]
        for i, anchor in enumerate(feats):
            jobs.append((chrom, anchor, tuple(window_members(feats, coords, i, window))))

    def fit_window(members):
        data = PairedData(x.values[[xrow[f] for f in members]],
                          y.values[[yrow[f] for f in members]])
        model = simcca_fit(data, k, prior, opts)
        return dependency_score(model, data, score_method), model.trace[-1]

    unique = sorted({m for _, _, m in jobs})
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = dict(zip(unique, pool.map(fit_window, unique)))
    else:
        results = {m: fit_window(m) for m in unique}
    out = [WindowScore(anchor, list(m), results[m][0], chrom, k, prior.sigma_t2, results[m][1])
           for chrom, anchor, m in jobs]
    out.sort(key=lambda w: (-w.score, w.anchor))
    return out
