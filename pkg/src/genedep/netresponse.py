"""Network-constrained discovery of gene sets with distinct response modes.

Each gene starts as its own subnetwork.  At every step the pair of
network-adjacent subnetworks whose joint mixture model lowers the total
BIC cost the most is merged, until no merge lowers it.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .dataio import ExpressionMatrix, InteractionNetwork, register_record
from .stats import bic, diag_gaussian_logpdf_rows, log_sum_exp_rows
from .vdp import MAX_TRUNCATION, VdpGmm, fit_vdp_gmm

DEFAULT_MAX_SIZE = 20
# merges need a cost drop beyond rounding noise; independent genes tie at 0
MERGE_TOL = 1e-6


@dataclass
class MixtureOptions:
    """Settings passed to :func:`genedep.vdp.fit_vdp_gmm` for every fit."""

    concentration: float = 1.0
    truncation: int = None
    tol: float = 1e-8
    max_iter: int = 500
    restarts: int = 3
    seed: int = 0


@register_record("subnetwork")
@dataclass
class Subnetwork:
    """Connected gene set with its fitted mixture and BIC cost."""

    gene_ids: list
    model: VdpGmm = field(repr=False)
    cost: float
    param_count: int
    improvement: float = 0.0

    def to_record(self) -> dict:
        w, m, v = self.model.effective_mixture()
        return {
            "gene_ids": list(self.gene_ids),
            "cost": self.cost,
            "param_count": self.param_count,
            "improvement": self.improvement,
            "log_likelihood": self.model.log_likelihood,
            "lower_bound": self.model.lower_bound,
            "weights": w.tolist(),
            "means": m.tolist(),
            "variances": v.tolist(),
        }

    @classmethod
    def from_record(cls, r: dict) -> "Subnetwork":
        w = np.asarray(r["weights"], dtype=float)
        # the effective mixture is all that is persisted; responsibilities are
        # rebuilt on demand by assign_responses
        model = VdpGmm(truncation=len(w), weights=w,
                       means=np.asarray(r["means"], dtype=float),
                       variances=np.asarray(r["variances"], dtype=float),
                       responsibilities=np.eye(len(w)), lower_bound=float(r["lower_bound"]),
                       effective_components=len(w), log_likelihood=float(r["log_likelihood"]),
                       converged=True, n_iter=0)
        return cls(list(r["gene_ids"]), model, float(r["cost"]), int(r["param_count"]),
                   float(r["improvement"]))

    def __eq__(self, other):
        if not isinstance(other, Subnetwork):
            return NotImplemented
        a, b = self.to_record(), other.to_record()
        return a == b


@register_record("response_assignment")
@dataclass
class ResponseAssignment:
    """Per-sample posterior over the response components and hard labels."""

    posterior: np.ndarray
    hard: np.ndarray
    sample_ids: list = None
    gene_ids: list = None

    def to_record(self) -> dict:
        return {"gene_ids": self.gene_ids, "sample_ids": self.sample_ids,
                "posterior": self.posterior.tolist(), "hard": self.hard.tolist()}

    @classmethod
    def from_record(cls, r: dict) -> "ResponseAssignment":
        return cls(np.asarray(r["posterior"], dtype=float), np.asarray(r["hard"], dtype=int),
                   r.get("sample_ids"), r.get("gene_ids"))


def param_count(effective_components: int, dims: int) -> int:
    """Free parameters of a diagonal mixture: weights, means, variances."""
    return (effective_components - 1) + effective_components * 2 * dims


def subnetwork_cost(model: VdpGmm, dims: int, n: int):
    """BIC cost of a fitted subnetwork model and its parameter count.

    Only effective components are counted, so unused stick pieces of the
    truncated prior add nothing to the penalty.
    """
    q = param_count(model.effective_components, dims)
    return bic(model.log_likelihood, q, n), q


def _fit_seed(base_seed, genes):
    key = zlib.crc32("\t".join(sorted(genes)).encode("utf-8"))
    return int(np.random.SeedSequence([int(base_seed), key]).generate_state(1)[0])


def fit_genes(values, opts: MixtureOptions, genes) -> VdpGmm:
    """Fit the response mixture of one gene set (``values``: genes x samples)."""
    x = np.asarray(values, dtype=float).T
    trunc = opts.truncation or min(x.shape[0], MAX_TRUNCATION)
    # fit on lexicographically sorted samples so the result ignores sample order
    order = np.lexsort(x.T[::-1])
    model = fit_vdp_gmm(x[order], concentration=opts.concentration, truncation=trunc,
                        tol=opts.tol, max_iter=opts.max_iter, restarts=opts.restarts,
                        seed=_fit_seed(opts.seed, genes))
    resp = np.empty_like(model.responsibilities)
    resp[order] = model.responsibilities
    model.responsibilities = resp
    return model


def _make_sub(genes, values, opts, n):
    model = fit_genes(values, opts, genes)
    cost, q = subnetwork_cost(model, len(genes), n)
    return Subnetwork(list(genes), model, cost, q)


def merge_delta(a: Subnetwork, b: Subnetwork, joint: Subnetwork) -> float:
    """Cost change of replacing ``a`` and ``b`` by their joint model."""
    return joint.cost - (a.cost + b.cost)


def detect_subnetworks(expr: ExpressionMatrix, net: InteractionNetwork, max_size=DEFAULT_MAX_SIZE,
                       options: MixtureOptions = None, merge_tol=MERGE_TOL, history=None):
    """Greedy agglomeration of network-adjacent genes under the BIC cost.

    Parameters
    ----------
    expr : ExpressionMatrix
        Must contain every network node as a feature.
    net : InteractionNetwork
    max_size : int
        Largest subnetwork considered for a merge.
    options : MixtureOptions, optional
    merge_tol : float
        A merge is executed only when it lowers the cost by more than this.
    history : list, optional
        If given, receives one ``(genes_a, genes_b, delta_cost)`` tuple per
        executed merge.

    Returns
    -------
    list of Subnetwork
        All final subnetworks (singletons included) sorted by decreasing
        cost improvement over their genes modelled as singletons.
    """
    if max_size < 2:
        raise ValueError("max_size must be >= 2")
    opts = options or MixtureOptions()
    missing = [g for g in net.nodes if g not in set(expr.feature_ids)]
    if missing:
        raise KeyError(f"network genes absent from expression data: {missing[:5]}")
    n = expr.shape[1]
    rows = {g: i for i, g in enumerate(expr.feature_ids)}
    vals = expr.values

    def fit(genes):
        genes = sorted(genes)
        return _make_sub(genes, vals[[rows[g] for g in genes]], opts, n)

    subs = {}
    member = {}
    for i, g in enumerate(sorted(net.nodes)):
        subs[i] = fit([g])
        member[g] = i
    singleton_cost = {g: subs[member[g]].cost for g in net.nodes}
    adj = {i: set() for i in subs}
    for e in net.edges:
        a, b = (member[g] for g in e)
        adj[a].add(b)
        adj[b].add(a)
    next_id = len(subs)
    cache = {}

    while True:
        best = None
        for a in sorted(adj):
            for b in sorted(adj[a]):
                if b <= a:
                    continue
                sa, sb = subs[a], subs[b]
                if len(sa.gene_ids) + len(sb.gene_ids) > max_size:
                    continue
                key = (a, b)
                if key not in cache:
                    joint = fit(sa.gene_ids + sb.gene_ids)
                    cache[key] = (merge_delta(sa, sb, joint), joint)
                delta, joint = cache[key]
                rank = (delta, min(sa.gene_ids[0], sb.gene_ids[0]), joint.gene_ids)
                if best is None or rank < best[0]:
                    best = (rank, a, b, joint)
        if best is None or not best[0][0] < -merge_tol:
            break
        (delta, _, _), a, b, joint = best
        if history is not None:
            history.append((subs[a].gene_ids, subs[b].gene_ids, delta))
        new = next_id
        next_id += 1
        subs[new] = joint
        for g in joint.gene_ids:
            member[g] = new
        adj[new] = (adj[a] | adj[b]) - {a, b}
        for c in adj[new]:
            adj[c] -= {a, b}
            adj[c].add(new)
        for c in (a, b):
            del subs[c], adj[c]
        cache = {k: v for k, v in cache.items() if a not in k and b not in k}

    out = []
    for s in subs.values():
        s.improvement = sum(singleton_cost[g] for g in s.gene_ids) - s.cost
        out.append(s)
    out.sort(key=lambda s: (-s.improvement, s.gene_ids[0]))
    return out


def assign_responses(sub: Subnetwork, expr: ExpressionMatrix) -> ResponseAssignment:
    """Posterior response probabilities of every sample under ``sub``'s model.

    Components are the effective components of the fitted mixture; the
    hard label is the most probable one (ties go to the lower index).
    """
    w, mean, var = sub.model.effective_mixture()
    if mean.shape[1] != len(sub.gene_ids):
        raise ValueError("model dimension does not match the subnetwork size")
    x = expr.subset(sub.gene_ids).values.T
    lp = diag_gaussian_logpdf_rows(x, mean, var) + np.log(w)[None, :]
    post = np.exp(lp - log_sum_exp_rows(lp)[:, None])
    post /= post.sum(axis=1, keepdims=True)
    return ResponseAssignment(post, np.argmax(post, axis=1), list(expr.sample_ids),
                              list(sub.gene_ids))


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b) if a | b else 1.0


def best_match(subnetworks, genes):
    """Subnetwork with the highest Jaccard overlap with ``genes``."""
    return max(subnetworks, key=lambda s: (jaccard(s.gene_ids, genes), -len(s.gene_ids)))

