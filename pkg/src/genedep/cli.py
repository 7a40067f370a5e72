"""Command-line interface: ``genedep <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors (bad flags, missing
files, out-of-domain values) and 1 on runtime failures.  Output files
depend only on the arguments, the input files and ``--seed``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import threading

import numpy as np

from . import assoclust, datagen, dataio, netresponse, rpa, simcca
from .vdp import MAX_TRUNCATION


class Progress:
    """Serialised progress lines on standard error."""

    def __init__(self, quiet=False):
        self.quiet = quiet
        self._lock = threading.Lock()

    def __call__(self, msg):
        if self.quiet:
            return
        with self._lock:
            print(f"[genedep] {msg}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# argument types

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _seed(text):
    v = _nonneg_int(text)
    if v >= 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _real(lo=-math.inf, hi=math.inf, lo_open=False, allow_inf=False):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
        if math.isnan(v) or (math.isinf(v) and not allow_inf):
            raise argparse.ArgumentTypeError(f"invalid number {text!r}")
        if v < lo or v > hi or (lo_open and v == lo):
            raise argparse.ArgumentTypeError(f"{v} outside the allowed range")
        return v
    return parse


_positive = _real(0.0, lo_open=True)
_probability = _real(0.0, 1.0)
_sigma_t2 = _real(0.0, allow_inf=True)


def _existing(flag, path, parser):
    if not os.path.isfile(path):
        parser.error(f"argument {flag}: file not found: {path}")
    return path


def _default_jobs():
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="genedep", formatter_class=fmt,
                                description="Probabilistic dependency and structure discovery "
                                            "for paired and networked expression data.")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    # simulate -------------------------------------------------------------
    sim = sub.add_parser("simulate", help="write a synthetic data set with ground truth",
                         formatter_class=fmt)
    vs = sim.add_subparsers(dest="variant", required=True, metavar="VARIANT")

    def variant(name, help_):
        v = vs.add_parser(name, help=help_, formatter_class=fmt)
        v.add_argument("--seed", type=_seed, required=True, help="random seed")
        v.add_argument("-o", "--out", required=True, help="output directory")
        return v

    v = variant("paired-latent", "two views sharing a Gaussian latent variable")
    v.add_argument("--n", type=_positive_int, default=100, help="samples")
    v.add_argument("--dx", type=_positive_int, default=5, help="X features")
    v.add_argument("--dy", type=_positive_int, default=5, help="Y features")
    v.add_argument("--k", type=_positive_int, default=1, help="latent dimension")
    v.add_argument("--noise-scale", type=_positive, default=1.0, help="noise std deviation")

    v = variant("probeset", "probe-level intensities of one probeset")
    v.add_argument("--arrays", type=_positive_int, default=20, help="non-reference arrays T")
    v.add_argument("--probes", type=_positive_int, default=10, help="probes J")
    v.add_argument("--contaminated", type=_nonneg_int, default=1, help="high-variance probes")
    v.add_argument("--factor", type=_positive, default=10.0, help="variance inflation")
    v.add_argument("--tau2", type=_positive, default=1.0, help="base probe variance")

    v = variant("network-responses", "network with a planted multi-mode subnetwork")
    v.add_argument("--nodes", type=_positive_int, default=80, help="network size")
    v.add_argument("--edge-prob", type=_probability, default=0.05, help="edge probability")
    v.add_argument("--planted", type=_positive_int, default=5, help="planted genes")
    v.add_argument("--modes", type=_positive_int, default=3, help="response modes")
    v.add_argument("--n", type=_positive_int, default=60, help="samples")
    v.add_argument("--separation", type=_real(0.0), default=5.0, help="mode separation")

    v = variant("coupled-partitions", "paired blobs with coupled cluster labels")
    v.add_argument("--n", type=_positive_int, default=100, help="sample pairs")
    v.add_argument("--dx", type=_positive_int, default=2, help="X dimension")
    v.add_argument("--dy", type=_positive_int, default=2, help="Y dimension")
    v.add_argument("--kx", type=_positive_int, default=3, help="X clusters")
    v.add_argument("--ky", type=_positive_int, default=3, help="Y clusters")
    v.add_argument("--coupling", type=_probability, default=1.0, help="label coupling")
    v.add_argument("--separation", type=_positive, default=5.0, help="blob separation")

    v = variant("window-dependency", "chromosome with a planted dependent block")
    v.add_argument("--features", type=_positive_int, default=50, help="features")
    v.add_argument("--n", type=_positive_int, default=50, help="samples")
    v.add_argument("--block-start", type=_nonneg_int, default=20, help="first block feature")
    v.add_argument("--block-size", type=_positive_int, default=10, help="block length")
    v.add_argument("--k", type=_positive_int, default=1, help="latent dimension")
    v.add_argument("--signal", type=_positive, default=1.0, help="loading scale")

    # rpa ------------------------------------------------------------------
    r = sub.add_parser("rpa", help="probe-reliability differential expression",
                       formatter_class=fmt)
    r.add_argument("--expr", required=True, help="probe x array matrix TSV")
    r.add_argument("--probesets", required=True, help="probe_id/probeset_id TSV")
    r.add_argument("--reference", default=None, help="reference array (default: first column)")
    r.add_argument("--alpha", type=_positive, default=rpa.DEFAULT_PRIOR, help="prior shape")
    r.add_argument("--beta", type=_positive, default=rpa.DEFAULT_PRIOR, help="prior scale")
    r.add_argument("--tol", type=_positive, default=rpa.DEFAULT_TOL, help="relative tolerance")
    r.add_argument("--max-iter", type=_positive_int, default=rpa.DEFAULT_MAX_ITER,
                   help="iteration cap")
    r.add_argument("-o", "--out", required=True, help="results JSON-lines")

    # netresponse ----------------------------------------------------------
    mo = netresponse.MixtureOptions()
    nr = sub.add_parser("netresponse", help="network-constrained response discovery",
                        formatter_class=fmt)
    nr.add_argument("--expr", required=True, help="gene x sample matrix TSV")
    nr.add_argument("--network", required=True, help="edge-list TSV")
    nr.add_argument("--max-size", type=_positive_int, default=netresponse.DEFAULT_MAX_SIZE,
                    help="largest subnetwork")
    nr.add_argument("--concentration", type=_positive, default=mo.concentration,
                    help="stick-breaking concentration")
    nr.add_argument("--truncation", type=_positive_int, default=None,
                    help=f"mixture truncation (default: min(N, {MAX_TRUNCATION}))")
    nr.add_argument("--restarts", type=_positive_int, default=mo.restarts,
                    help="initialisations per fit")
    nr.add_argument("--tol", type=_positive, default=mo.tol, help="bound tolerance")
    nr.add_argument("--max-iter", type=_positive_int, default=mo.max_iter,
                    help="iteration cap per fit")
    nr.add_argument("--seed", type=_seed, default=mo.seed, help="random seed")
    nr.add_argument("--min-genes", type=_positive_int, default=2,
                    help="smallest subnetwork to report assignments for")
    nr.add_argument("-o", "--out", required=True, help="results JSON-lines")

    # simcca ---------------------------------------------------------------
    so = simcca.SimCcaOptions()
    sc = sub.add_parser("simcca", help="similarity-constrained probabilistic CCA",
                        formatter_class=fmt)
    sc.add_argument("--x", required=True, help="first view matrix TSV")
    sc.add_argument("--y", required=True, help="second view matrix TSV")
    sc.add_argument("--positions", default=None,
                    help="feature/chromosome/coordinate TSV; enables the window screen")
    sc.add_argument("--window", type=_positive_int, default=simcca.DEFAULT_WINDOW,
                    help="window size d")
    sc.add_argument("--latent-dim", type=_positive_int, default=None,
                    help="latent dimension k (default: min(dx, dy))")
    sc.add_argument("--sigma-t2", type=_sigma_t2, default=0.0,
                    help="prior variance of T; 'inf' for ordinary CCA, 0 pins T = M")
    sc.add_argument("--prior-m", default="identity", help="'identity' or a matrix TSV path")
    sc.add_argument("--score", choices=("ratio", "lr"), default="ratio",
                    help="dependency score")
    sc.add_argument("--max-iter", type=_positive_int, default=so.max_iter, help="EM iterations")
    sc.add_argument("--tol", type=_positive, default=so.tol, help="EM relative tolerance")
    sc.add_argument("--jobs", type=_positive_int, default=_default_jobs(),
                    help="parallel window fits")
    sc.add_argument("-o", "--out", required=True, help="results JSON-lines")

    # acluster -------------------------------------------------------------
    ao = assoclust.AcOptions()
    hp = assoclust.AcHyperparams()
    ac = sub.add_parser("acluster", help="associative clustering of paired samples",
                        formatter_class=fmt)
    ac.add_argument("--x", required=True, help="first view matrix TSV")
    ac.add_argument("--y", required=True, help="second view matrix TSV")
    ac.add_argument("--kx", type=_positive_int, required=True, help="X clusters")
    ac.add_argument("--ky", type=_positive_int, required=True, help="Y clusters")
    ac.add_argument("--nd", type=_positive, default=hp.nd, help="cell pseudocount")
    ac.add_argument("--nx", type=_positive, default=hp.nx, help="X margin pseudocount")
    ac.add_argument("--ny", type=_positive, default=hp.ny, help="Y margin pseudocount")
    ac.add_argument("--restarts", type=_positive_int, default=ao.restarts, help="restarts")
    ac.add_argument("--bootstrap", type=_nonneg_int, default=0,
                    help="bootstrap runs B (0 disables; otherwise >= 2)")
    ac.add_argument("--threshold", type=_probability, default=assoclust.DEFAULT_THRESHOLD,
                    help="co-occurrence reliability threshold")
    ac.add_argument("--seed", type=_seed, default=ao.seed, help="random seed")
    ac.add_argument("--jobs", type=_positive_int, default=_default_jobs(),
                    help="parallel bootstrap fits")
    ac.add_argument("-o", "--out", required=True, help="results JSON-lines")
    return p


# ---------------------------------------------------------------------------
# commands

def _write_truth(truth, out):
    with open(os.path.join(out, "truth.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(truth.to_json() + "\n")


def cmd_simulate(a, log):
    os.makedirs(a.out, exist_ok=True)
    path = lambda name: os.path.join(a.out, name)  # noqa: E731
    if a.variant == "paired-latent":
        x, y, truth = datagen.gen_paired_latent(a.seed, a.n, a.dx, a.dy, a.k, a.noise_scale)
        dataio.write_matrix(x, path("X.tsv"))
        dataio.write_matrix(y, path("Y.tsv"))
    elif a.variant == "probeset":
        d, tau2, aff, _ = datagen.probeset_params(a.seed, a.arrays, a.probes, a.contaminated,
                                                  a.factor, a.tau2)
        expr, truth = datagen.gen_probeset_data(a.seed, a.arrays, a.probes, d, tau2, aff)
        dataio.write_matrix(expr, path("expr.tsv"))
        with open(path("probesets.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            for pid in expr.feature_ids:
                fh.write(f"{pid}\tps0\n")
    elif a.variant == "network-responses":
        expr, net, truth = datagen.gen_network_responses(a.seed, a.nodes, a.edge_prob,
                                                         a.planted, a.modes, a.n, a.separation)
        dataio.write_matrix(expr, path("expr.tsv"))
        dataio.write_edge_list(net, path("network.tsv"))
    elif a.variant == "coupled-partitions":
        x, y, truth = datagen.gen_coupled_partitions(a.seed, a.n, a.dx, a.dy, a.kx, a.ky,
                                                     a.coupling, a.separation)
        dataio.write_matrix(x, path("X.tsv"))
        dataio.write_matrix(y, path("Y.tsv"))
    else:
        x, y, pos, truth = datagen.gen_window_dependency(a.seed, a.features, a.n, a.block_start,
                                                         a.block_size, a.k, a.signal)
        dataio.write_matrix(x, path("X.tsv"))
        dataio.write_matrix(y, path("Y.tsv"))
        dataio.write_positions(pos, path("positions.tsv"))
    _write_truth(truth, a.out)
    log(f"wrote {a.variant} data to {a.out}")


def cmd_rpa(a, log):
    expr = dataio.read_matrix(a.expr)
    sets = dataio.read_probesets(a.probesets)
    out = []
    for name, probes in sets.items():
        m = rpa.differential_matrix(expr, probes, a.reference)
        fit = rpa.rpa_fit(m, rpa.RpaPriors.uniform(len(probes), a.alpha, a.beta), a.tol,
                          a.max_iter)
        fit.probeset = name
        out.append(fit)
        log(f"probeset {name}: {len(probes)} probes, {fit.iterations} iterations")
    dataio.write_results(out, a.out)


def cmd_netresponse(a, log):
    expr = dataio.read_matrix(a.expr)
    net = dataio.read_edge_list(a.network)
    if net.skipped_self_loops:
        log(f"skipped {net.skipped_self_loops} self-loop line(s)")
    opts = netresponse.MixtureOptions(a.concentration, a.truncation, a.tol, a.max_iter,
                                      a.restarts, a.seed)
    history = []
    subs = netresponse.detect_subnetworks(expr, net, a.max_size, opts, history=history)
    log(f"{len(history)} merges, {len(subs)} subnetworks")
    out = []
    for s in subs:
        out.append(s)
        if len(s.gene_ids) >= a.min_genes:
            out.append(netresponse.assign_responses(s, expr))
    dataio.write_results(out, a.out)


def _prior_m(a, dx, dy, parser):
    if a.prior_m == "identity":
        if dx != dy:
            parser.error("argument --prior-m: identity needs equally many X and Y features")
        return np.eye(dx)
    m = dataio.read_matrix(_existing("--prior-m", a.prior_m, parser)).values
    if m.shape != (dy, dx):
        parser.error(f"argument --prior-m: expected a {dy} x {dx} matrix, got {m.shape}")
    return m


def cmd_simcca(a, log, parser):
    x = dataio.read_matrix(a.x)
    y = dataio.read_matrix(a.y)
    opts = simcca.SimCcaOptions(max_iter=a.max_iter, tol=a.tol)
    if a.positions:
        pos = dataio.read_positions(_existing("--positions", a.positions, parser))
        k = a.latent_dim or a.window
        prior = simcca.SimCcaPrior(_prior_m(a, a.window, a.window, parser), a.sigma_t2)
        skipped = []
        scores = simcca.genome_screen(x, y, pos, a.window, k, prior, opts, a.jobs, a.score,
                                      skipped)
        for chrom in skipped:
            log(f"chromosome {chrom} has fewer than {a.window} shared features; skipped")
        log(f"scored {len(scores)} windows")
        dataio.write_results(scores, a.out)
        return
    data = simcca.PairedData.from_matrices(x, y)
    prior = simcca.SimCcaPrior(_prior_m(a, data.dx, data.dy, parser), a.sigma_t2)
    model = simcca.simcca_fit(data, a.latent_dim, prior, opts)
    z = simcca.latent_z(model, data)
    log(f"fit converged={model.converged} after {len(model.trace) - 1} iterations")
    dataio.write_results([model, {
        "type": "simcca_summary",
        "score": simcca.dependency_score(model, data, a.score),
        "canonical_correlations": simcca.canonical_correlations(model.sigma(), data.dx).tolist(),
        "sample_ids": data.sample_ids,
        "latent_z": z.tolist(),
    }], a.out)


def cmd_acluster(a, log, parser):
    x = dataio.read_matrix(a.x)
    y = dataio.read_matrix(a.y)
    if x.sample_ids != y.sample_ids:
        raise ValueError("X and Y must list the same sample pairs in the same order")
    n = len(x.sample_ids)
    for flag, k in (("--kx", a.kx), ("--ky", a.ky)):
        if not 2 <= k <= n:
            parser.error(f"argument {flag}: must lie in [2, {n}]")
    if a.bootstrap == 1:
        parser.error("argument --bootstrap: need 0 or at least 2 runs")
    h = assoclust.AcHyperparams(a.nd, a.nx, a.ny)
    opts = assoclust.AcOptions(restarts=a.restarts, seed=a.seed)
    model = assoclust.ac_fit(x, y, a.kx, a.ky, h, opts)
    log(f"log Bayes factor {model.log_bf:.4f} (K-means baseline {model.baseline_log_bf:.4f})")
    out = [model]
    if a.bootstrap:
        rec = assoclust.ac_bootstrap(x, y, a.kx, a.ky, h, a.bootstrap, a.threshold, a.seed,
                                     opts, a.jobs)
        log(f"bootstrap: {len(rec.reliable_pairs())} reliable pairs")
        out.append(rec)
    dataio.write_results(out, a.out)


def run(argv=None) -> int:
    """Parse ``argv`` and execute; returns the exit status."""
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    log = Progress(a.quiet)
    sub_parser = parser._subparsers._group_actions[0].choices[a.command]
    try:
        for flag in ("expr", "probesets", "network", "x", "y"):
            if getattr(a, flag, None) is not None and a.command != "simulate":
                _existing(f"--{flag}", getattr(a, flag), sub_parser)
        if a.command == "simulate":
            cmd_simulate(a, log)
        elif a.command == "rpa":
            cmd_rpa(a, log)
        elif a.command == "netresponse":
            cmd_netresponse(a, log)
        elif a.command == "simcca":
            cmd_simcca(a, log, sub_parser)
        else:
            cmd_acluster(a, log, sub_parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"genedep: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
