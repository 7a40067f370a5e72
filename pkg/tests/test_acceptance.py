"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import hashlib
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
from scipy import linalg, stats

from genedep.assoclust import ContingencyTable, ac_fit, contingency_counts, kmeans_baseline, log_bayes_factor
from genedep.cli import run
from genedep.dataio import ExpressionMatrix
from genedep.datagen import (gen_coupled_partitions, gen_network_responses, gen_paired_latent,
                             gen_probeset_data, gen_window_dependency, probeset_params)
from genedep.netresponse import MixtureOptions, best_match, detect_subnetworks, jaccard
from genedep.rpa import differential_matrix, peca_summarize, rpa_fit
from genedep.simcca import (PairedData, SimCcaOptions, SimCcaPrior, canonical_correlations,
                            genome_screen, simcca_fit)
from genedep.vdp import fit_vdp_gmm

WORKERS = 4


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def _expr(values):
    return ExpressionMatrix(np.asarray(values, float), [f"p{j}" for j in range(len(values))],
                            [f"a{t:03d}" for t in range(np.shape(values)[1])])


def test_01_rpa_contamination(report):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        d, tau2, mu, bad = probeset_params(seed, 20, 10, contaminated=1, factor=10.0)
        expr, _ = gen_probeset_data(seed, 20, 10, d, tau2, mu)
        fit = rpa_fit(differential_matrix(expr, reference="a000"))
        hits += int(np.argmax(fit.tau2)) == int(bad[0])
    dt = time.perf_counter() - t0
    report(1, hits >= 95 and dt < 60, f"contaminated probe ranked first in {hits}/100 seeds, {dt:.1f} s")


def test_02_rpa_monotone(report):
    worst = math.inf
    for seed in range(50):
        rng = np.random.default_rng([2, seed])
        t, j = rng.integers(2, 30), rng.integers(1, 15)
        tau2 = rng.gamma(1.0, 1.0, size=j) * 10 ** rng.uniform(-1, 1)
        expr, _ = gen_probeset_data(seed, t, j, rng.normal(size=t), tau2, rng.normal(8, 1, size=j))
        tr = np.diff(rpa_fit(differential_matrix(expr), tol=1e-12, max_iter=200).trace)
        worst = min(worst, tr.min(initial=0.0))
    report(2, worst >= -1e-9, f"smallest log-posterior step over 50 instances: {worst:.3g}")


def test_03_affinity_cancellation(report):
    same = 0
    for seed in range(10):
        rng = np.random.default_rng([3, seed])
        t, j = rng.integers(3, 25), rng.integers(1, 12)
        # dyadic grid: every difference is exactly representable
        s = rng.integers(-2 ** 14, 2 ** 14, size=(j, t)) / 256.0
        off = rng.integers(-2 ** 14, 2 ** 14, size=(j, 1)) / 256.0
        a, b = differential_matrix(_expr(s)), differential_matrix(_expr(s + off))
        fa, fb = rpa_fit(a), rpa_fit(b)
        same += (a.values.tobytes() == b.values.tobytes()
                 and all(getattr(fa, k).tobytes() == getattr(fb, k).tobytes()
                         for k in ("d", "tau2", "alpha_post", "beta_post"))
                 and fa.trace == fb.trace
                 and peca_summarize(a).tobytes() == peca_summarize(b).tobytes())
    report(3, same == 10, f"bit-identical outputs in {same}/10 instances")


def _cca_oracle(s, dx):
    a = np.zeros_like(s)
    a[:dx, dx:] = s[:dx, dx:]
    a[dx:, :dx] = s[dx:, :dx]
    vals = linalg.eigh(a, linalg.block_diag(s[:dx, :dx], s[dx:, dx:]), eigvals_only=True)
    return vals[-1]


def test_04_simcca_classical(report):
    err = 0.0
    for seed in range(20):
        x, y, _ = gen_paired_latent(seed, 200, 5, 5, 1, 1.0)
        d = PairedData.from_matrices(x, y)
        m = simcca_fit(d, 1, SimCcaPrior.identity(5, math.inf))
        err = max(err, abs(canonical_correlations(m.sigma(), 5)[0] - _cca_oracle(d.covariance(), 5)))
    report(4, err <= 1e-4, f"max first-correlation error over 20 seeds: {err:.2e}")


def test_05_full_regularisation(report):
    worst = 0.0
    for seed in range(5):
        x, y, _ = gen_paired_latent(seed, 100, 4, 4, 2, 1.0)
        m = simcca_fit(PairedData.from_matrices(x, y), 2, SimCcaPrior.identity(4, 0.0))
        worst = max(worst, float(np.linalg.norm(m.wy - m.wx)))
    report(5, worst <= 1e-10, f"max ||Wy - Wx||_F = {worst:.1e}")


def test_06_simcca_monotone(report):
    sigmas = [0.1, 1.0, 10.0, 0.0, math.inf]
    worst = -math.inf
    for i in range(20):
        rng = np.random.default_rng([6, i])
        dx = int(rng.integers(2, 6))
        x, y, _ = gen_paired_latent(i, int(rng.integers(30, 150)), dx, dx, int(rng.integers(1, dx)), 1.0)
        m = simcca_fit(PairedData.from_matrices(x, y), None, SimCcaPrior.identity(dx, sigmas[i % 5]),
                       SimCcaOptions(max_iter=150))
        if m.wx.shape[1] > dx:
            continue
        tr = np.array(m.trace)
        worst = max(worst, float(np.max(np.diff(tr) / np.maximum(1.0, np.abs(tr[1:])), initial=-math.inf)))
    report(6, worst <= 1e-8, f"largest relative objective increase over 20 fits: {worst:.3g}")


def test_07_genome_screen(report):
    t0 = time.perf_counter()
    hits = 0
    opts = SimCcaOptions(max_iter=200, tol=1e-6)
    for seed in range(50):
        x, y, pos, truth = gen_window_dependency(seed, 50, 50, 20, 10)
        res = genome_screen(x, y, pos, window=10, k=1, prior=SimCcaPrior.identity(10, 0.0), opts=opts,
                            n_jobs=WORKERS)
        hits += res[0].anchor in truth.payload["block"]
    dt = time.perf_counter() - t0
    report(7, hits >= 45 and dt < 300, f"top anchor inside the block in {hits}/50 seeds, {dt:.0f} s")


def _fisher_logp(t):
    (a, b), (c, d) = t
    n = a + b + c + d
    return stats.hypergeom(n, a + b, a + c).logpmf(a)


def test_08_hypergeometric_oracle(report):
    worst, pairs = 0.0, 0
    for n in range(1, 21):
        groups = {}
        for a, b, c in itertools.product(range(n + 1), repeat=3):
            if a + b + c <= n:
                t = np.array([[a, b], [c, n - a - b - c]])
                groups.setdefault((a + b, a + c), []).append(t)
        for tables in groups.values():
            bf = [log_bayes_factor(ContingencyTable(t)) for t in tables]
            lp = [_fisher_logp(t) for t in tables]
            for i, j in itertools.combinations(range(len(tables)), 2):
                worst = max(worst, abs((bf[i] - bf[j]) - (lp[j] - lp[i])))
                pairs += 1
    report(8, worst <= 1e-9, f"{pairs} same-margin pairs, max deviation {worst:.1e}")


def _diagonal(t):
    return np.all((t > 0).sum(0) == 1) and np.all((t > 0).sum(1) == 1)


def test_09_ac_recovery(report):
    good = 0
    for seed in range(50):
        x, y, _ = gen_coupled_partitions(seed, 100, 2, 2, 3, 3, 1.0)
        m = ac_fit(x, y, 3, 3)
        good += bool(_diagonal(m.table.counts) and m.log_bf > 0)
    # coupling 0: fit on one half, score the other half, compare with k-means
    ac, km = [], []
    for seed in range(20):
        x, y, _ = gen_coupled_partitions(seed, 200, 2, 2, 3, 3, 0.0)
        x, y = x.values.T, y.values.T
        m = ac_fit(x[:100], y[:100], 3, 3)
        ac.append(log_bayes_factor(contingency_counts(m.partition_x.assign(x[100:]),
                                                      m.partition_y.assign(y[100:]), 3, 3)))
        bx, by = kmeans_baseline(x[:100], 3), kmeans_baseline(y[:100], 3)
        km.append(log_bayes_factor(contingency_counts(bx.assign(x[100:]), by.assign(y[100:]), 3, 3)))
    p = stats.ttest_rel(ac, km, alternative="greater").pvalue
    report(9, good >= 45 and p > 0.05,
           f"diagonal with logBF > 0 in {good}/50 seeds; null excess over k-means p = {p:.2f}")


def _netresponse_seed(seed):
    expr, net, truth = gen_network_responses(seed, 80, 0.05, 5, 3, 60, 5.0)
    subs = detect_subnetworks(expr, net, options=MixtureOptions(seed=seed))
    b = best_match(subs, truth.payload["planted"])
    return jaccard(b.gene_ids, truth.payload["planted"]) >= 0.8 and b.model.effective_components == 3


def test_10_netresponse_recovery(report):
    t0 = time.perf_counter()
    with ProcessPoolExecutor(WORKERS) as ex:
        good = sum(ex.map(_netresponse_seed, range(50)))
    dt = time.perf_counter() - t0
    report(10, good >= 40 and dt < 600,
           f"planted set recovered with 3 modes in {good}/50 seeds, {dt:.0f} s on {os.cpu_count()} cores")


def test_11_vb_bound(report):
    worst_step, worst_row = 0.0, 0.0
    for seed in range(100):
        rng = np.random.default_rng([11, seed])
        n, d, k = rng.integers(5, 120), rng.integers(1, 6), rng.integers(1, 5)
        x = rng.normal(size=(n, d)) * rng.uniform(0.2, 3) + rng.uniform(2, 8) * rng.integers(0, k, size=(n, 1))
        m = fit_vdp_gmm(x, concentration=rng.uniform(0.2, 5), seed=seed, restarts=2)
        tr = np.array(m.bound_trace)
        worst_step = min(worst_step, float(np.min(np.diff(tr) / np.maximum(1.0, np.abs(tr[1:])), initial=0)))
        worst_row = max(worst_row, float(np.max(np.abs(m.responsibilities.sum(axis=1) - 1.0))))
    report(11, worst_step >= -1e-8 and worst_row <= 1e-9 and m.responsibilities.min() >= 0,
           f"smallest relative bound step {worst_step:.2g}, worst row-sum error {worst_row:.1e}")


def _tree_hash(path):
    h = hashlib.sha256()
    files = sorted(path.rglob("*")) if path.is_dir() else [path]
    for f in files:
        if f.is_file():
            rel = f.relative_to(path).as_posix() if path.is_dir() else ""
            h.update(rel.encode() + b"\0" + f.read_bytes())
    return h.hexdigest()


def test_12_cli_determinism(report, tmp_path):
    src = tmp_path / "in"
    sims = {"paired-latent": ["--n", "80", "--dx", "4", "--dy", "4", "--k", "1"],
            "probeset": [],
            "network-responses": ["--nodes", "12", "--planted", "3", "--edge-prob", "0.2"],
            "coupled-partitions": ["--n", "40"],
            "window-dependency": ["--features", "12", "--block-size", "4", "--block-start", "4", "--n", "30"]}
    cmds = {f"simulate {v}": ["simulate", v, "--seed", "3", *a] for v, a in sims.items()}
    for v, a in sims.items():
        assert run(["-q", "simulate", v, "--seed", "3", "-o", str(src / v), *a]) == 0
    cmds["rpa"] = ["rpa", "--expr", str(src / "probeset/expr.tsv"),
                   "--probesets", str(src / "probeset/probesets.tsv")]
    cmds["netresponse"] = ["netresponse", "--expr", str(src / "network-responses/expr.tsv"),
                           "--network", str(src / "network-responses/network.tsv"), "--seed", "3"]
    cmds["simcca"] = ["simcca", "--x", str(src / "paired-latent/X.tsv"), "--y",
                      str(src / "paired-latent/Y.tsv"), "--latent-dim", "1"]
    cmds["simcca screen"] = ["simcca", "--x", str(src / "window-dependency/X.tsv"),
                             "--y", str(src / "window-dependency/Y.tsv"), "--positions",
                             str(src / "window-dependency/positions.tsv"), "--window", "4", "--jobs", "2"]
    cmds["acluster"] = ["acluster", "--x", str(src / "coupled-partitions/X.tsv"), "--y",
                        str(src / "coupled-partitions/Y.tsv"), "--kx", "3", "--ky", "3", "--seed", "3",
                        "--bootstrap", "3", "--jobs", "2"]
    differ = []
    for i, (name, argv) in enumerate(cmds.items()):
        digests = []
        for rep in range(2):
            out = tmp_path / f"run{i}-{rep}"
            assert run(["-q", *argv, "-o", str(out)]) == 0, name
            digests.append(_tree_hash(out))
        if digests[0] != digests[1]:
            differ.append(name)
    report(12, not differ, f"{len(cmds) - len(differ)}/{len(cmds)} subcommands byte-identical on rerun"
           + (f"; differing: {', '.join(differ)}" if differ else ""))
