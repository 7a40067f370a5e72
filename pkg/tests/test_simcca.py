import math
import warnings

import numpy as np
import pytest
from scipy import linalg, stats

from genedep.dataio import ExpressionMatrix, PositionTable
from genedep.datagen import gen_paired_latent, gen_window_dependency
from genedep.simcca import (ConstraintError, PairedData, SimCcaModel, SimCcaOptions, SimCcaPrior,
                            canonical_correlations, constrained_cca, dependency_score,
                            genome_screen, latent_z, simcca_fit, simcca_objective, window_members)


def cca_oracle(s, dx):
    """Canonical correlations from the symmetric generalised eigenproblem."""
    a = np.zeros_like(s)
    a[:dx, dx:] = s[:dx, dx:]
    a[dx:, :dx] = s[dx:, :dx]
    b = linalg.block_diag(s[:dx, :dx], s[dx:, dx:])
    vals = linalg.eigh(a, b, eigvals_only=True)
    return vals[::-1][:min(dx, s.shape[0] - dx)]


def dense_objective(wx, t, psi_x, psi_y, s, m, sigma_t2):
    w = np.vstack([wx, t @ wx])
    sig = w @ w.T + linalg.block_diag(psi_x, psi_y)
    sign, logdet = np.linalg.slogdet(sig)
    pen = 0.0 if math.isinf(sigma_t2) else np.sum((t - m) ** 2) / (2 * sigma_t2)
    return logdet + np.trace(np.linalg.inv(sig) @ s) + pen


def _paired(seed, n=200, dx=5, dy=5, k=1, noise=1.0):
    x, y, _ = gen_paired_latent(seed, n, dx, dy, k, noise)
    return PairedData.from_matrices(x, y)


def _random_model(rng, dx, dy, k):
    a = rng.normal(size=(dx, dx))
    b = rng.normal(size=(dy, dy))
    return SimCcaModel(rng.normal(size=(dx, k)), rng.normal(size=(dy, dx)),
                       a @ a.T + dx * np.eye(dx), b @ b.T + dy * np.eye(dy))


def test_paired_data_centering():
    d = PairedData(np.array([[1.0, 3.0]]), np.array([[0.0, 2.0]]))
    assert d.centered and np.allclose(d.x, [[-1, 1]])
    with pytest.raises(ValueError):
        PairedData(np.zeros((1, 3)), np.zeros((1, 4)))


def test_objective_trivial_cases(rng):
    d = _paired(0, 50, 2, 3)
    s = d.covariance()
    m0 = SimCcaModel(np.zeros((2, 1)), np.zeros((3, 2)), np.eye(2), np.eye(3))
    for sig in (math.inf, 1.0, 0.0):
        assert simcca_objective(m0, d, SimCcaPrior(np.zeros((3, 2)), sig)) == pytest.approx(np.trace(s))
    e = np.zeros((3, 2))
    e[0, 0] = 2.0
    m1 = SimCcaModel(np.zeros((2, 1)), e, np.eye(2), np.eye(3))
    diff = (simcca_objective(m1, d, SimCcaPrior(np.zeros((3, 2)), 1.0))
            - simcca_objective(m0, d, SimCcaPrior(np.zeros((3, 2)), 1.0)))
    assert diff == pytest.approx(2.0)
    with pytest.raises(ConstraintError):
        simcca_objective(m1, d, SimCcaPrior(np.zeros((3, 2)), 0.0))


def test_objective_dense_oracle(rng):
    for _ in range(5):
        d = PairedData(rng.normal(size=(3, 20)), rng.normal(size=(3, 20)))
        model = _random_model(rng, 3, 3, 2)
        m = rng.normal(size=(3, 3))
        for sig in (math.inf, 0.7):
            ref = dense_objective(model.wx, model.t, model.psi_x, model.psi_y, d.covariance(), m, sig)
            assert simcca_objective(model, d, SimCcaPrior(m, sig)) == pytest.approx(ref, abs=1e-10)


def test_objective_singular():
    d = _paired(0, 20, 2, 2)
    bad = SimCcaModel(np.zeros((2, 1)), np.eye(2), np.zeros((2, 2)), np.eye(2))
    with pytest.raises(linalg.LinAlgError, match="jitter required"):
        simcca_objective(bad, d, SimCcaPrior.identity(2))


def test_wy_bit_exact():
    m = simcca_fit(_paired(1), 1, SimCcaPrior.identity(5, 1.0))
    assert (m.t @ m.wx).tobytes() == m.wy.tobytes()
    assert np.linalg.eigvalsh(m.psi_x)[0] > 0 and np.linalg.eigvalsh(m.psi_y)[0] > 0


@pytest.mark.parametrize("seed", range(5))
def test_classical_equivalence(seed):
    d = _paired(seed)
    m = simcca_fit(d, 1, SimCcaPrior.identity(5))
    assert canonical_correlations(m.sigma(), 5)[0] == pytest.approx(cca_oracle(d.covariance(), 5)[0], abs=1e-4)


def test_full_k_reproduces_all_correlations():
    d = _paired(2, 300, 3, 3, 2)
    m = simcca_fit(d, 3, SimCcaPrior.identity(3))
    np.testing.assert_allclose(canonical_correlations(m.sigma(), 3), cca_oracle(d.covariance(), 3),
                               atol=1e-6)


def test_full_regularisation():
    m = simcca_fit(_paired(3), 2, SimCcaPrior.identity(5, 0.0))
    assert np.linalg.norm(m.wy - m.wx) <= 1e-10
    m = simcca_fit(_paired(3, dy=5), 1, SimCcaPrior(2 * np.eye(5), 0.0))
    np.testing.assert_array_equal(m.t, 2 * np.eye(5))


@pytest.mark.parametrize("sig", [math.inf, 10.0, 1.0, 0.1, 0.0])
def test_monotone_objective(sig):
    m = simcca_fit(_paired(4, 60, 4, 4), 2, SimCcaPrior.identity(4, sig), SimCcaOptions(max_iter=80))
    tr = np.array(m.trace)
    assert np.all(np.diff(tr) <= 1e-8 * np.maximum(1, np.abs(tr[1:])))


def test_prior_interpolation():
    # ||T - M|| shrinks as the prior tightens
    ok = 0
    for seed in range(6):
        d = _paired(seed, 80, 3, 3)
        norms = [np.linalg.norm(simcca_fit(d, 1, SimCcaPrior.identity(3, s), SimCcaOptions(max_iter=150)).t
                                - np.eye(3)) for s in (math.inf, 10.0, 1.0, 0.1, 0.0)]
        ok += all(b <= a + 1e-6 for a, b in zip(norms, norms[1:]))
    assert ok >= 5


def test_fit_errors():
    d = _paired(0, 3, 3, 3)
    with pytest.raises(ValueError):
        simcca_fit(d, 3)
    d = _paired(0, 30, 3, 2)
    with pytest.raises(ValueError, match="prior mean"):
        simcca_fit(d, 1)
    with pytest.raises(ValueError):
        SimCcaPrior(np.eye(2), -1.0)


def test_nonconvergence_flag():
    m = simcca_fit(_paired(0, 60, 3, 3), 1, SimCcaPrior.identity(3, 0.0), SimCcaOptions(max_iter=2, tol=0.0))
    assert not m.converged and len(m.trace) == 3


def test_dependency_score_properties(rng):
    m = _random_model(rng, 3, 3, 1)
    m0 = SimCcaModel(np.zeros((3, 1)), m.t, m.psi_x, m.psi_y)
    assert dependency_score(m0) == 0.0
    m2 = SimCcaModel(2 * m.wx, m.t, m.psi_x, m.psi_y)
    assert dependency_score(m2) == pytest.approx(4 * dependency_score(m))
    d = _paired(0, 100, 3, 3)
    fit = simcca_fit(d, 1, SimCcaPrior.identity(3))
    assert dependency_score(fit, d, "lr") > 0
    with pytest.raises(ValueError):
        dependency_score(fit, None, "lr")


def test_score_increases_with_signal():
    scores = []
    for noise in (2.0, 1.0, 0.5):
        d = _paired(5, 400, 4, 4, 1, noise)
        scores.append(dependency_score(simcca_fit(d, 1, SimCcaPrior.identity(4))))
    assert scores[0] < scores[1] < scores[2]


def test_independent_views_permutation_null(rng):
    x = rng.normal(size=(4, 60))
    y = rng.normal(size=(4, 60))
    prior = SimCcaPrior.identity(4)
    obs = dependency_score(simcca_fit(PairedData(x, y), 1, prior))
    null = [dependency_score(simcca_fit(PairedData(x, y[:, rng.permutation(60)]), 1, prior))
            for _ in range(100)]
    assert obs < np.quantile(null, 0.95)


def test_latent_z_properties(rng):
    m = _random_model(rng, 3, 2, 2)
    d = PairedData(rng.normal(size=(3, 15)), rng.normal(size=(2, 15)))
    z = latent_z(m, d)
    sig = m.sigma()
    obs = np.vstack([d.x, d.y])
    np.testing.assert_allclose(z, m.w.T @ np.linalg.inv(sig) @ obs, atol=1e-10)
    zero = PairedData(np.zeros((3, 2)), np.zeros((2, 2)), centered=True)
    assert not latent_z(m, zero).any()
    with pytest.raises(ValueError):
        latent_z(m, PairedData(np.zeros((2, 2)), np.zeros((2, 2))))


def test_latent_z_noiseless_limit():
    m = SimCcaModel(np.ones((1, 1)), np.ones((1, 1)), 1e-9 * np.eye(1), 1e-9 * np.eye(1))
    d = PairedData(np.array([[0.7, -0.7]]), np.array([[0.7, -0.7]]))
    np.testing.assert_allclose(latent_z(m, d), [[0.7, -0.7]], rtol=1e-8)


def test_latent_z_shrinkage(rng):
    # data whose sample covariance equals the model covariance exactly
    for _ in range(5):
        m = _random_model(rng, 2, 3, 2)
        sig = m.sigma()
        raw = rng.normal(size=(5, 40))
        raw -= raw.mean(axis=1, keepdims=True)
        white = np.linalg.cholesky(raw @ raw.T / 40)
        obs = np.linalg.cholesky(sig) @ np.linalg.solve(white, raw)
        d = PairedData(obs[:2], obs[2:], centered=True)
        z = latent_z(m, d)
        cov = z @ z.T / 40
        analytic = m.w.T @ np.linalg.solve(sig, m.w)
        np.testing.assert_allclose(cov, analytic, atol=1e-10)
        assert np.linalg.eigvalsh(np.eye(2) - cov)[0] > -1e-12


def test_constrained_cca_self_correlation(rng):
    x = rng.normal(size=(3, 50))
    pairs = constrained_cca(PairedData(x, x.copy()), np.eye(3), 2)
    assert pairs[0].correlation == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(pairs[0].vy, pairs[0].vx)


def test_classical_mode_oracle(rng):
    z = rng.normal(size=(2, 500))
    x = rng.normal(size=(4, 2)) @ z + rng.normal(size=(4, 500))
    y = rng.normal(size=(4, 2)) @ z + rng.normal(size=(4, 500))
    d = PairedData(x, y)
    pairs = constrained_cca(d, None, 4, unconstrained=True)
    np.testing.assert_allclose([p.correlation for p in pairs], cca_oracle(d.covariance(), 4), atol=1e-8)
    scaled = constrained_cca(PairedData(7.5 * x, y), None, 4, unconstrained=True)
    np.testing.assert_allclose([p.correlation for p in scaled], [p.correlation for p in pairs], atol=1e-10)


def test_constrained_components_uncorrelated(rng):
    z = rng.normal(size=(1, 300))
    x = rng.normal(size=(3, 1)) @ z + rng.normal(size=(3, 300))
    y = x + 0.5 * rng.normal(size=(3, 300))
    d = PairedData(x, y)
    pairs = constrained_cca(d, np.eye(3), 3)
    corr = [p.correlation for p in pairs]
    assert corr[0] >= corr[1] - 1e-9 >= corr[2] - 2e-9
    sxx = d.covariance()[:3, :3]
    assert abs(pairs[0].vx @ sxx @ pairs[1].vx) < 1e-8
    # brute force over random directions never beats the optimum
    c = d.covariance()
    best = max((v @ c[:3, 3:] @ v) / math.sqrt((v @ c[:3, :3] @ v) * (v @ c[3:, 3:] @ v))
               for v in rng.normal(size=(2000, 3)))
    assert corr[0] >= best - 1e-9


def test_constrained_cca_independent_null(rng):
    x = rng.normal(size=(3, 80))
    y = rng.normal(size=(3, 80))
    obs = constrained_cca(PairedData(x, y), np.eye(3), 1)[0].correlation
    null = [constrained_cca(PairedData(x, y[:, rng.permutation(80)]), np.eye(3), 1, n_starts=2)[0].correlation
            for _ in range(60)]
    assert obs < np.quantile(null, 0.95)


def test_constrained_cca_rank_deficient_warns(rng):
    x = rng.normal(size=(2, 30))
    x = np.vstack([x, x[0]])
    with pytest.warns(RuntimeWarning, match="rank deficient"):
        constrained_cca(PairedData(x, rng.normal(size=(3, 30))), np.eye(3), 1)


def test_window_members():
    order = ["a", "b", "c", "d", "e"]
    coords = [0, 10, 20, 30, 40]
    assert window_members(order, coords, 0, 3) == ["a", "b", "c"]
    assert window_members(order, coords, 2, 3) == ["b", "c", "d"]
    # tie at distance 10 on both sides: the lower coordinate wins
    assert window_members(order, coords, 2, 2) == ["b", "c"]


def test_genome_screen_whole_chromosome_window():
    x, y, pos, _ = gen_window_dependency(0, 12, 30, 3, 4)
    res = genome_screen(x, y, pos, window=12, k=1)
    assert len(res) == 12 and len({tuple(r.members) for r in res}) == 1
    assert len({r.score for r in res}) == 1


def test_genome_screen_skips_short_chromosomes():
    x, y, pos, _ = gen_window_dependency(0, 12, 30, 3, 4)
    table = dict(pos.positions)
    table["f000"] = ("2", 5)
    skipped = []
    with pytest.warns(RuntimeWarning, match="skipped"):
        res = genome_screen(x, y, PositionTable(table), window=5, k=1, skipped=skipped)
    assert skipped == ["2"] and all(r.chromosome == "1" for r in res)


def test_genome_screen_parallel_matches_serial():
    x, y, pos, _ = gen_window_dependency(1, 20, 30, 5, 5)
    a = genome_screen(x, y, pos, window=5, k=1)
    b = genome_screen(x, y, pos, window=5, k=1, n_jobs=3)
    assert [(w.anchor, w.score) for w in a] == [(w.anchor, w.score) for w in b]
    assert [w.score for w in a] == sorted((w.score for w in a), reverse=True)


def test_genome_screen_null_exchangeable():
    # all-noise data: the rank of every anchor's score is exchangeable
    ranks = []
    opts = SimCcaOptions(max_iter=100, tol=1e-6)
    for seed in range(15):
        x, y, pos, _ = gen_window_dependency(seed, 20, 30, 0, 1, signal=1e-6)
        res = genome_screen(x, y, pos, window=5, k=1, opts=opts)
        ranks.append(int(res[0].anchor[1:]))
    perm = np.random.default_rng(0).integers(0, 20, size=len(ranks))
    assert stats.ks_2samp(ranks, perm).pvalue > 0.01
