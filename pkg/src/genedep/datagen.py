"""Seeded synthetic data with planted ground truth.

Every generator draws from PCG64 bit generators seeded through
``numpy.random.SeedSequence(seed)``.  Each call spawns named child
streams (``streams(seed, n)``) so that, e.g., the latent draw does not
shift when a noise parameter changes.  PCG64 and SeedSequence are fully
specified and platform independent, so a given ``(seed, params)`` yields
the same bits everywhere numpy >= 1.17 runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataio import ExpressionMatrix, InteractionNetwork, PositionTable


def streams(seed: int, n: int) -> list:
    """``n`` independent generators derived from ``seed``."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class GroundTruth:
    """Planted structure behind a synthetic data set.

    ``variant`` is one of ``paired-latent``, ``probeset``,
    ``network-responses``, ``coupled-partitions`` or ``window-dependency``;
    ``payload`` holds the variant-specific arrays and id lists.
    """

    variant: str
    payload: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, (np.floating,)):
                return float(v)
            return v
        return json.dumps({"variant": self.variant,
                           "payload": {k: conv(v) for k, v in self.payload.items()}},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        obj = json.loads(text)
        return cls(obj["variant"], obj["payload"])


def _ids(prefix, n):
    width = max(3, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def gen_paired_latent(seed, n, dx, dy, k, noise_scale):
    """Paired views sharing a Gaussian latent source.

    ``x = W_x z + e_x`` and ``y = W_y z + e_y`` with ``z ~ N(0, I_k)``,
    loadings drawn i.i.d. standard normal and isotropic noise of standard
    deviation ``noise_scale``.
    """
    if k > min(dx, dy):
        raise ValueError(f"latent dim k={k} exceeds min(dx, dy)={min(dx, dy)}")
    if not noise_scale > 0:
        raise ValueError("noise_scale must be positive")
    r_load, r_lat, r_nx, r_ny = streams(seed, 4)
    wx = r_load.standard_normal((dx, k))
    wy = r_load.standard_normal((dy, k))
    z = r_lat.standard_normal((k, n))
    x = wx @ z + noise_scale * r_nx.standard_normal((dx, n))
    y = wy @ z + noise_scale * r_ny.standard_normal((dy, n))
    samples = _ids("s", n)
    truth = GroundTruth("paired-latent", {"W_x": wx, "W_y": wy, "Z": z})
    return (ExpressionMatrix(x, _ids("x", dx), samples),
            ExpressionMatrix(y, _ids("y", dy), samples), truth)


def gen_probeset_data(seed, n_arrays, n_probes, d_true, tau2_true, affinities,
                      contamination_threshold=None):
    """Probe-level intensities ``s_tj = g_t + mu_j + e_tj``.

    Array 0 is the reference with ``g_0 = 0``; arrays ``1..T`` carry
    ``g_t = d_true[t-1]``.  Returns a probes x (T+1) matrix.  Probes whose
    variance exceeds ``contamination_threshold`` (default twice the median
    variance) are listed as contaminated in the ground truth.
    """
    d_true = np.asarray(d_true, dtype=float)
    tau2_true = np.asarray(tau2_true, dtype=float)
    affinities = np.asarray(affinities, dtype=float)
    if d_true.shape != (n_arrays,):
        raise ValueError(f"d_true must have length T={n_arrays}")
    if tau2_true.shape != (n_probes,) or affinities.shape != (n_probes,):
        raise ValueError(f"tau2_true and affinities must have length J={n_probes}")
    if np.any(~(tau2_true > 0)):
        raise ValueError("every probe variance must be > 0")
    (rng,) = streams(seed, 1)
    g = np.concatenate([[0.0], d_true])
    eps = rng.standard_normal((n_probes, n_arrays + 1)) * np.sqrt(tau2_true)[:, None]
    s = g[None, :] + affinities[:, None] + eps
    if contamination_threshold is None:
        contamination_threshold = 2.0 * float(np.median(tau2_true))
    bad = np.flatnonzero(tau2_true > contamination_threshold)
    truth = GroundTruth("probeset", {
        "d": d_true, "tau2": tau2_true, "contaminated": bad,
        "reference": "a" + "0" * max(3, len(str(n_arrays))),
    })
    return ExpressionMatrix(s, _ids("p", n_probes), _ids("a", n_arrays + 1)), truth


def probeset_params(seed, n_arrays, n_probes, contaminated=1, factor=10.0, tau2=1.0):
    """Random ``(d_true, tau2_true, affinities, bad)`` for :func:`gen_probeset_data`.

    ``d_true ~ N(0, 1)``, affinities ``~ N(8, 1)``; ``contaminated`` probes
    picked at random get ``factor`` times the base variance ``tau2``.
    """
    if not 0 <= contaminated <= n_probes:
        raise ValueError("contaminated must lie in [0, n_probes]")
    (rng,) = streams([seed, 1], 1)
    d_true = rng.standard_normal(n_arrays)
    affinities = 8.0 + rng.standard_normal(n_probes)
    bad = np.sort(rng.choice(n_probes, contaminated, replace=False))
    tau2_true = np.full(n_probes, float(tau2))
    tau2_true[bad] *= factor
    return d_true, tau2_true, affinities, bad


def gen_network_responses(seed, node_count, edge_prob, planted_genes, modes, n, separation,
                          weights=None):
    """Random network with one planted multi-state subnetwork.

    Background genes are i.i.d. ``N(0, 1)``.  Each planted gene takes, in
    mode ``r``, a mean from ``{0, separation, 2*separation, ...}``
    assigned by an independent random permutation per gene, so every pair
    of modes differs by at least ``separation`` noise standard deviations
    in every planted gene.  Sample modes are drawn from ``weights``
    (uniform by default).  A random spanning path through the planted
    genes guarantees that they form a connected subgraph.
    """
    if planted_genes < 2:
        raise ValueError("planted_genes must be >= 2")
    if modes < 2:
        raise ValueError("modes must be >= 2")
    if planted_genes > node_count:
        raise ValueError(f"planted_genes={planted_genes} exceeds node_count={node_count}")
    r_graph, r_plant, r_lab, r_noise = streams(seed, 4)
    nodes = _ids("g", node_count)
    iu = np.triu_indices(node_count, 1)
    keep = r_graph.random(iu[0].size) < edge_prob
    edges = {frozenset((nodes[a], nodes[b])) for a, b in zip(iu[0][keep], iu[1][keep])}
    planted = np.sort(r_plant.choice(node_count, planted_genes, replace=False))
    path = r_plant.permutation(planted)
    for a, b in zip(path[:-1], path[1:]):
        edges.add(frozenset((nodes[a], nodes[b])))
    levels = np.arange(modes) * float(separation)
    mode_means = np.stack([r_plant.permutation(levels) for _ in range(planted_genes)])
    if weights is None:
        weights = np.full(modes, 1.0 / modes)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (modes,) or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
        raise ValueError("weights must be a probability vector of length `modes`")
    labels = r_lab.choice(modes, size=n, p=weights)
    x = r_noise.standard_normal((node_count, n))
    x[planted] += mode_means[:, labels]
    truth = GroundTruth("network-responses", {
        "planted": [nodes[i] for i in planted], "labels": labels,
        "mode_means": mode_means, "weights": weights,
    })
    return (ExpressionMatrix(x, nodes, _ids("s", n)),
            InteractionNetwork(nodes, edges), truth)


def _blob_centers(rng, k, dim, separation):
    if dim >= k:
        return np.eye(k, dim) * (separation / np.sqrt(2.0))
    c = rng.standard_normal((k, dim))
    dist = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
    dmin = dist[np.triu_indices(k, 1)].min()
    return c * (separation / dmin)


def gen_coupled_partitions(seed, n, dx, dy, kx, ky, coupling, separation=5.0):
    """Paired samples whose blob labels follow a tunable joint table.

    Joint label probabilities are ``(1 - c) * P_indep + c * P_map`` where
    ``P_indep`` is uniform over all ``kx * ky`` cells and ``P_map`` puts
    mass ``1/kx`` on cells ``(i, i mod ky)``.  Each label selects a
    spherical unit-variance blob; blob centres are ``separation`` apart.
    """
    if not 0.0 <= coupling <= 1.0:
        raise ValueError("coupling must lie in [0, 1]")
    if coupling == 1.0 and kx != ky:
        raise ValueError("coupling=1 requires kx == ky")
    r_lab, r_cx, r_cy, r_nx, r_ny = streams(seed, 5)
    p_ind = np.full((kx, ky), 1.0 / (kx * ky))
    p_map = np.zeros((kx, ky))
    p_map[np.arange(kx), np.arange(kx) % ky] = 1.0 / kx
    joint = (1.0 - coupling) * p_ind + coupling * p_map
    cells = r_lab.choice(kx * ky, size=n, p=joint.ravel())
    lx, ly = np.divmod(cells, ky)
    cx = _blob_centers(r_cx, kx, dx, separation)
    cy = _blob_centers(r_cy, ky, dy, separation)
    x = (cx[lx] + r_nx.standard_normal((n, dx))).T
    y = (cy[ly] + r_ny.standard_normal((n, dy))).T
    samples = _ids("s", n)
    truth = GroundTruth("coupled-partitions", {
        "labels_x": lx, "labels_y": ly, "joint": joint, "centers_x": cx, "centers_y": cy,
    })
    return (ExpressionMatrix(x, _ids("x", dx), samples),
            ExpressionMatrix(y, _ids("y", dy), samples), truth)


def gen_window_dependency(seed, n_features, n, block_start, block_size, k=1,
                          signal=1.0, chromosome="1", spacing=1000):
    """Two feature-aligned views on one chromosome with a planted block.

    Features ``block_start .. block_start+block_size-1`` of both views load
    on a shared latent ``z`` (loadings ``signal * N(0,1)``; the Y loadings
    equal the X loadings plus 20% perturbation, mimicking the similar
    responses of neighbouring probes); all other features are independent
    ``N(0, 1)`` noise.  Coordinates are ``spacing * index``.
    """
    if block_start < 0 or block_start + block_size > n_features:
        raise ValueError("planted block does not fit on the chromosome")
    r_load, r_lat, r_nx, r_ny = streams(seed, 4)
    wx = signal * r_load.standard_normal((block_size, k))
    wy = wx + 0.2 * signal * r_load.standard_normal((block_size, k))
    z = r_lat.standard_normal((k, n))
    x = r_nx.standard_normal((n_features, n))
    y = r_ny.standard_normal((n_features, n))
    blk = slice(block_start, block_start + block_size)
    x[blk] += wx @ z
    y[blk] += wy @ z
    fids = _ids("f", n_features)
    samples = _ids("s", n)
    pos = PositionTable({f: (chromosome, spacing * i) for i, f in enumerate(fids)})
    truth = GroundTruth("window-dependency", {
        "block": fids[blk], "W_x": wx, "W_y": wy, "Z": z,
    })
    return ExpressionMatrix(x, fids, samples), ExpressionMatrix(y, fids, samples), pos, truth
