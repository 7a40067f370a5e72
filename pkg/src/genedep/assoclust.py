"""Associative clustering of paired samples.

Two Voronoi partitions, one per data space, are placed so that the
contingency table of the paired hard assignments is as far from
independent as possible, measured by the Bayes factor between a
dependent Dirichlet-multinomial model over the cells and an independent
model whose cell frequencies are the outer product of two
Dirichlet-multinomial margins.

Marginal likelihoods (``n_ij`` cell counts, ``N`` total, ``K = Kx Ky``)::

    log p(n | dep) = lnG(K n_d) - lnG(N + K n_d) + sum_ij [lnG(n_ij + n_d) - lnG(n_d)]
    log p(n | ind) = lnG(Kx n_x) - lnG(N + Kx n_x) + sum_i [lnG(n_i. + n_x) - lnG(n_x)]
                   + lnG(Ky n_y) - lnG(N + Ky n_y) + sum_j [lnG(n_.j + n_y) - lnG(n_y)]

The centroids are optimised by Polak-Ribiere conjugate gradients on a
smoothed objective in which hard counts are replaced by sums of soft
memberships ``softmax(-lam ||x - m||^2)``, with ``lam`` annealed upward.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .dataio import ExpressionMatrix, register_record

ANNEAL = (1.0, 4.0, 16.0, 64.0)
DEFAULT_RESTARTS = 5
DEFAULT_THRESHOLD = 0.5


@dataclass
class VoronoiPartition:
    """Centroids (K x dim) with optional soft-border inverse temperature."""

    centroids: np.ndarray
    lam: float = math.inf

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        if self.centroids.shape[0] < 1:
            raise ValueError("need at least one centroid")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def sq_dist(self, x) -> np.ndarray:
        """N x K squared distances from samples (rows of ``x``)."""
        c = self.centroids
        d = (np.sum(x * x, axis=1)[:, None] - 2.0 * x @ c.T + np.sum(c * c, axis=1)[None, :])
        return np.maximum(d, 0.0)

    def assign(self, x) -> np.ndarray:
        """Nearest centroid; ``argmin`` breaks ties towards the lower index."""
        return np.argmin(self.sq_dist(x), axis=1)

    def soft(self, x, lam=None) -> np.ndarray:
        lam = self.lam if lam is None else lam
        if math.isinf(lam):
            out = np.zeros((x.shape[0], self.k))
            out[np.arange(x.shape[0]), self.assign(x)] = 1.0
            return out
        return _softmax(-lam * self.sq_dist(x))


def _softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ContingencyTable:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2:
            raise ValueError("contingency table must be 2-D")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def row_margins(self):
        return self.counts.sum(axis=1)

    @property
    def col_margins(self):
        return self.counts.sum(axis=0)

    @property
    def total(self):
        return self.counts.sum()


@dataclass(frozen=True)
class AcHyperparams:
    """Dirichlet pseudocounts of the dependent (``nd``) and margin models."""

    nd: float = 1.0
    nx: float = 1.0
    ny: float = 1.0

    def __post_init__(self):
        for name in ("nd", "nx", "ny"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def contingency_counts(assign_x, assign_y, kx=None, ky=None) -> ContingencyTable:
    """Cross-tabulate two label vectors into a ``kx x ky`` table."""
    ax = np.asarray(assign_x, dtype=int)
    ay = np.asarray(assign_y, dtype=int)
    if ax.shape != ay.shape or ax.ndim != 1:
        raise ValueError("label vectors must have equal length")
    kx = kx if kx is not None else (int(ax.max()) + 1 if ax.size else 1)
    ky = ky if ky is not None else (int(ay.max()) + 1 if ay.size else 1)
    if ax.size and (ax.min() < 0 or ax.max() >= kx or ay.min() < 0 or ay.max() >= ky):
        raise ValueError("label out of range")
    counts = np.zeros((kx, ky), dtype=np.int64)
    np.add.at(counts, (ax, ay), 1)
    return ContingencyTable(counts)


def _dm_logml(counts, alpha):
    """Dirichlet-multinomial log marginal likelihood of a count vector."""
    counts = np.asarray(counts, dtype=float).ravel()
    k = counts.size
    return (gammaln(k * alpha) - gammaln(counts.sum() + k * alpha)
            + float(np.sum(gammaln(counts + alpha))) - k * gammaln(alpha))


def log_bayes_factor(t: ContingencyTable, h: AcHyperparams = None) -> float:
    """``log p(counts | dependent) - log p(counts | independent margins)``.

    Also accepts real-valued (soft) counts.
    """
    h = h or AcHyperparams()
    n = np.asarray(t.counts if isinstance(t, ContingencyTable) else t, dtype=float)
    dep = _dm_logml(n, h.nd)
    ind = _dm_logml(n.sum(axis=1), h.nx) + _dm_logml(n.sum(axis=0), h.ny)
    return float(dep - ind)


def _logbf_grad_counts(n, h):
    """Partial derivatives of the log Bayes factor w.r.t. every cell count."""
    # the two normalising lnG(N + K n) terms differ in N-derivative but N is
    # fixed under soft assignment, so they drop out of the centroid gradient
    return (digamma(n + h.nd) - digamma(n.sum(axis=1) + h.nx)[:, None]
            - digamma(n.sum(axis=0) + h.ny)[None, :])


@register_record("ac_model")
@dataclass
class AcModel:
    """Fitted pair of partitions with their hard contingency table.

    ``trace`` lists ``(lam, values)`` per annealing stage of the winning
    restart: the smoothed objective after every accepted CG step.
    """

    partition_x: VoronoiPartition
    partition_y: VoronoiPartition
    table: ContingencyTable
    log_bf: float
    baseline_log_bf: float = None
    labels_x: np.ndarray = None
    labels_y: np.ndarray = None
    scale_x: float = 1.0
    scale_y: float = 1.0
    trace: list = field(default_factory=list, repr=False)

    def to_record(self) -> dict:
        return {"centroids_x": self.partition_x.centroids.tolist(),
                "centroids_y": self.partition_y.centroids.tolist(),
                "table": self.table.counts.tolist(), "log_bf": self.log_bf,
                "baseline_log_bf": self.baseline_log_bf,
                "labels_x": None if self.labels_x is None else self.labels_x.tolist(),
                "labels_y": None if self.labels_y is None else self.labels_y.tolist()}

    @classmethod
    def from_record(cls, r: dict) -> "AcModel":
        lx = None if r.get("labels_x") is None else np.asarray(r["labels_x"], dtype=int)
        ly = None if r.get("labels_y") is None else np.asarray(r["labels_y"], dtype=int)
        return cls(VoronoiPartition(r["centroids_x"]), VoronoiPartition(r["centroids_y"]),
                   ContingencyTable(np.asarray(r["table"], dtype=np.int64)), float(r["log_bf"]),
                   r.get("baseline_log_bf"), lx, ly)


@register_record("cooccurrence")
@dataclass
class CooccurrenceRecord:
    """Pairwise co-occurrence frequencies over bootstrap fits.

    ``frequency[a, b]`` is the fraction of the resamples containing both
    samples in which they fell in the same cross cluster (NaN if no
    resample contained both).
    """

    frequency: np.ndarray
    support: np.ndarray
    threshold: float
    runs: int
    sample_ids: list = None

    @property
    def reliable(self) -> np.ndarray:
        """Boolean matrix of pairs at or above the threshold."""
        with np.errstate(invalid="ignore"):
            r = np.nan_to_num(self.frequency, nan=0.0) >= self.threshold
        np.fill_diagonal(r, False)
        return r

    def reliable_pairs(self):
        a, b = np.nonzero(np.triu(self.reliable, 1))
        return list(zip(a.tolist(), b.tolist()))

    def to_record(self) -> dict:
        freq = [[None if math.isnan(v) else v for v in row] for row in self.frequency.tolist()]
        return {"sample_ids": self.sample_ids, "runs": self.runs, "threshold": self.threshold,
                "support": self.support.tolist(), "frequency": freq,
                "reliable_pairs": self.reliable_pairs()}

    @classmethod
    def from_record(cls, r: dict) -> "CooccurrenceRecord":
        freq = np.array([[math.nan if v is None else v for v in row] for row in r["frequency"]],
                        dtype=float)
        return cls(freq, np.asarray(r["support"], dtype=np.int64), float(r["threshold"]),
                   int(r["runs"]), r.get("sample_ids"))


# ---------------------------------------------------------------------------
# K-means

@dataclass
class KMeansOptions:
    max_iter: int = 300
    seed: int = 0
    n_init: int = 1


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        # all remaining points coincide with chosen centres: take unused rows
        j = int(rng.choice(n, p=d2 / tot)) if tot > 0 else next(i for i in range(n) if i not in idx)
        idx.append(j)
        d2 = np.minimum(d2, np.sum((x - x[j]) ** 2, axis=1))
    return x[idx].copy()


def _respawn_empty(x, c, lab):
    """Move centroids of empty clusters to the farthest points."""
    counts = np.bincount(lab, minlength=c.shape[0])
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        warnings.warn(f"{empty.size} empty cluster(s); centroid moved to the farthest point",
                      RuntimeWarning, stacklevel=3)
        d = np.min(VoronoiPartition(c).sq_dist(x), axis=1)
        for e in empty:
            j = int(np.argmax(d))
            c[e] = x[j]
            d[j] = -1.0
    return c


def kmeans_baseline(x, k, opts: KMeansOptions = None, wcss_trace=None) -> VoronoiPartition:
    """Lloyd's algorithm from k-means++ seeding on rows of ``x``.

    The within-cluster sum of squares after every iteration is appended to
    ``wcss_trace`` when given; it never increases.
    """
    opts = opts or KMeansOptions()
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= K <= N (K={k}, N={n})")
    rng = np.random.default_rng(opts.seed)
    best = None
    for _ in range(max(1, opts.n_init)):
        c = _kmeanspp(x, k, rng)
        trace = []
        lab = VoronoiPartition(c).assign(x)
        for _ in range(opts.max_iter):
            new = np.array([x[lab == i].mean(axis=0) if np.any(lab == i) else c[i]
                            for i in range(k)])
            new_lab = VoronoiPartition(new).assign(x)
            trace.append(float(np.sum((x - new[new_lab]) ** 2)))
            c = new
            if np.array_equal(new_lab, lab):
                break
            lab = new_lab
        if best is None or trace[-1] < best[1][-1]:
            best = (c, trace)
    if wcss_trace is not None:
        wcss_trace.extend(best[1])
    return VoronoiPartition(best[0])


# ---------------------------------------------------------------------------
# associative clustering

@dataclass
class AcOptions:
    restarts: int = DEFAULT_RESTARTS
    anneal: tuple = ANNEAL
    max_iter: int = 200
    tol: float = 1e-9
    seed: int = 0


def _smoothed(params, x, y, kx, ky, lam, h):
    dx = x.shape[1]
    mx = params[:kx * dx].reshape(kx, dx)
    my = params[kx * dx:].reshape(ky, y.shape[1])
    # ||x||^2 is constant per row and cancels in the softmax
    px = _softmax(lam * (2.0 * x @ mx.T - np.sum(mx * mx, axis=1)))     # N x Kx
    py = _softmax(lam * (2.0 * y @ my.T - np.sum(my * my, axis=1)))
    n = px.T @ py
    f = log_bayes_factor(n, h)
    g = _logbf_grad_counts(n, h)                    # Kx x Ky
    # dF/dp_x[k, a] = (G py_k)[a]; softmax chain rule
    gx = py @ g.T                                   # N x Kx
    gy = px @ g                                     # N x Ky
    cx = px * (gx - np.sum(gx * px, axis=1, keepdims=True))
    cy = py * (gy - np.sum(gy * py, axis=1, keepdims=True))
    # d(-lam ||x - m_a||^2)/dm_a = 2 lam (x - m_a)
    dmx = 2.0 * lam * (cx.T @ x - cx.sum(axis=0)[:, None] * mx)
    dmy = 2.0 * lam * (cy.T @ y - cy.sum(axis=0)[:, None] * my)
    return f, np.concatenate([dmx.ravel(), dmy.ravel()])


def _cg_maximise(fun, p0, max_iter, tol, trace):
    """Polak-Ribiere+ conjugate gradients with Armijo backtracking.

    Only accepted steps are taken, so the objective never decreases.
    """
    p = p0.copy()
    f, g = fun(p)
    trace.append(f)
    d = g.copy()
    step = 1.0 / max(1.0, math.sqrt(float(d @ d)))
    for _ in range(max_iter):
        slope = float(g @ d)
        if slope <= 0:
            d, slope = g.copy(), float(g @ g)
        if slope <= 0:
            break
        # warm start from the last accepted step, allowing it to grow
        step *= 2.0
        accepted = False
        for _ in range(40):
            fn, gn = fun(p + step * d)
            if fn >= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        p = p + step * d
        beta = max(0.0, float(gn @ (gn - g)) / float(g @ g))
        d = gn + beta * d
        done = abs(fn - f) <= tol * max(1.0, abs(fn))
        f, g = fn, gn
        trace.append(f)
        if done:
            break
    return p


def _rms(v):
    s = math.sqrt(float(np.mean(np.sum(v * v, axis=1))))
    return s if s > 0 else 1.0


def _hard_eval(mx, my, x, y, h):
    lx = VoronoiPartition(mx).assign(x)
    ly = VoronoiPartition(my).assign(y)
    t = contingency_counts(lx, ly, mx.shape[0], my.shape[0])
    return log_bayes_factor(t, h), lx, ly, t


def _as_rows(a):
    if isinstance(a, ExpressionMatrix):
        return a.values.T.astype(float)
    return np.asarray(a, dtype=float)


def ac_fit(x, y, kx, ky, h: AcHyperparams = None, opts: AcOptions = None) -> AcModel:
    """Maximise the contingency-table Bayes factor over both sets of centroids.

    ``x`` and ``y`` are ExpressionMatrix views (features x samples) or
    arrays with samples in rows, paired by position.  Each view is scaled
    by its root-mean-square norm so one annealing schedule suits both.
    Every restart starts from independent K-means solutions (the first
    from the baseline itself), anneals through ``opts.anneal`` and is
    judged by its hard-assignment Bayes factor; the best restart is kept,
    so the result never scores below the K-means baseline.
    """
    h = h or AcHyperparams()
    opts = opts or AcOptions()
    xr, yr = _as_rows(x), _as_rows(y)
    n = xr.shape[0]
    if yr.shape[0] != n:
        raise ValueError("X and Y must have the same number of paired samples")
    if kx > n or ky > n or kx < 2 or ky < 2:
        raise ValueError(f"need 2 <= Kx, Ky <= N (Kx={kx}, Ky={ky}, N={n})")
    sx, sy = _rms(xr - xr.mean(axis=0)), _rms(yr - yr.mean(axis=0))
    xs, ys = xr / sx, yr / sy
    seeds = np.random.SeedSequence(opts.seed).generate_state(2 * max(1, opts.restarts))
    base_x = kmeans_baseline(xs, kx, KMeansOptions(seed=int(seeds[0])))
    base_y = kmeans_baseline(ys, ky, KMeansOptions(seed=int(seeds[1])))
    baseline = _hard_eval(base_x.centroids, base_y.centroids, xs, ys, h)[0]
    best = None
    for r in range(max(1, opts.restarts)):
        if r == 0:
            mx, my = base_x.centroids, base_y.centroids
        else:
            mx = kmeans_baseline(xs, kx, KMeansOptions(seed=int(seeds[2 * r]))).centroids
            my = kmeans_baseline(ys, ky, KMeansOptions(seed=int(seeds[2 * r + 1]))).centroids
        p = np.concatenate([mx.ravel(), my.ravel()])
        cand = [p]
        stages = []
        for lam in opts.anneal:
            stage = []
            p = _cg_maximise(lambda q: _smoothed(q, xs, ys, kx, ky, lam, h), p,
                             opts.max_iter, opts.tol, stage)
            stages.append((lam, stage))
            cand.append(p)
        for q in cand:
            qx, qy = q[:kx * xs.shape[1]].reshape(kx, -1), q[kx * xs.shape[1]:].reshape(ky, -1)
            score = _hard_eval(qx, qy, xs, ys, h)[0]
            if best is None or score > best[0]:
                best = (score, qx, qy, stages)
    score, qx, qy, trace = best
    _, lx, ly, t = _hard_eval(qx, qy, xs, ys, h)
    return AcModel(VoronoiPartition(qx * sx), VoronoiPartition(qy * sy), t, score, baseline,
                   lx, ly, sx, sy, trace)


def ac_bootstrap(x, y, kx, ky, h: AcHyperparams = None, runs=20, threshold=DEFAULT_THRESHOLD,
                 seed=0, opts: AcOptions = None, n_jobs=1) -> CooccurrenceRecord:
    """Co-occurrence of sample pairs in the same cross cluster over resamples.

    Each run draws ``N`` samples with replacement, fits :func:`ac_fit`
    on the resample and assigns every drawn sample to its hard
    ``(x-cluster, y-cluster)`` cell.  A pair counts towards a run only if
    both samples were drawn.
    """
    if runs < 2:
        raise ValueError("need at least 2 bootstrap runs")
    opts = opts or AcOptions()
    xr, yr = _as_rows(x), _as_rows(y)
    n = xr.shape[0]
    children = np.random.SeedSequence(seed).spawn(runs)

    def one(child):
        rng = np.random.Generator(np.random.PCG64(child))
        idx = rng.integers(0, n, size=n)
        fit_opts = AcOptions(opts.restarts, opts.anneal, opts.max_iter, opts.tol,
                             int(rng.integers(2 ** 32)))
        m = ac_fit(xr[idx], yr[idx], kx, ky, h, fit_opts)
        drawn = np.unique(idx)
        cell = (m.partition_x.assign(xr[drawn]) * ky + m.partition_y.assign(yr[drawn]))
        return drawn, cell

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, children))
    else:
        results = [one(c) for c in children]
    same = np.zeros((n, n), dtype=np.int64)
    support = np.zeros((n, n), dtype=np.int64)
    for drawn, cell in results:
        support[np.ix_(drawn, drawn)] += 1
        same[np.ix_(drawn, drawn)] += (cell[:, None] == cell[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(support > 0, same / np.maximum(support, 1), np.nan)
    ids = list(x.sample_ids) if isinstance(x, ExpressionMatrix) else None
    return CooccurrenceRecord(freq, support, float(threshold), runs, ids)
