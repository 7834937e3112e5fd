import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_marginals, dense_phi_chain, dense_phi_tree, enumerate_trees, random_chain, random_tree_instance
from structconf import chain, tree
from structconf.confidence import (
    AlternativeSet,
    ConfidenceConfig,
    ConfigError,
    DegenerateWeights,
    UnsupportedMethod,
    agreement_confidence,
    build_alternatives_kbest,
    build_alternatives_sampled,
    conf_combo,
    conf_delta,
    conf_gamma,
    rank_normalize,
    sample_weights,
    score_batch,
    sentence_confidence,
    unit_scores,
)
from structconf.decoding import decode
from structconf.model import LinearModel

DIM = 12


def chain_scores(x, w):
    import itertools

    out = {}
    for z in itertools.product(range(x.L), repeat=x.n):
        out[z] = float(dense_phi_chain(x, z, DIM) @ w)
    return out


def model_with(w, sigma=None):
    m = LinearModel(len(w), np.array(w, dtype=float), sigma, averaging=False)
    return m


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5), st.integers(2, 4))
def test_delta_chain_matches_enumeration(seed, n, L):
    rng = np.random.default_rng(seed)
    x = random_chain(rng, n, L)
    w = rng.normal(size=DIM)
    scores = chain_scores(x, w)
    y_hat, best = decode(x, w)
    got = conf_delta(x, w)
    for p in range(n):
        alt = max(s for z, s in scores.items() if z[p] != y_hat[p])
        assert got[p] == pytest.approx(best - alt, abs=1e-9)


def test_delta_single_label_is_infinite():
    x = random_chain(np.random.default_rng(0), 3, 1)
    assert np.all(np.isinf(conf_delta(x, np.zeros(DIM))))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4))
def test_delta_tree_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    x = random_tree_instance(rng, n, dim=15)
    w = rng.normal(size=15)
    wm = tree.edge_weights(x, w)
    scored = enumerate_trees(wm)
    heads, best = scored[0]
    got = conf_delta(x, w)
    for d in range(1, n + 1):
        alts = [s for t, s in scored if t[d - 1] != heads[d - 1]]
        if alts:
            assert got[d - 1] == pytest.approx(best - max(alts), abs=1e-9)
        else:
            assert got[d - 1] == np.inf


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 5), st.integers(2, 4), st.sampled_from([0.3, 1.0, 3.0]))
def test_gamma_matches_enumeration(seed, n, L, c):
    rng = np.random.default_rng(seed)
    x = random_chain(rng, n, L)
    w = rng.normal(size=DIM)
    t = chain.build_potentials(x, w)
    y_hat, _ = chain.viterbi(t)
    expect = brute_marginals(t.node, t.trans, c)[np.arange(n), y_hat]
    assert np.allclose(conf_gamma(x, w, c), expect, atol=1e-9)


def test_gamma_unsupported_for_trees():
    x = random_tree_instance(np.random.default_rng(0), 3)
    with pytest.raises(UnsupportedMethod):
        conf_gamma(x, np.zeros(15), 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.integers(2, 3), st.integers(1, 20))
def test_kb_and_wkb_match_enumeration(seed, n, L, K):
    rng = np.random.default_rng(seed)
    x = random_chain(rng, n, L)
    w = rng.normal(size=DIM)
    ranked = sorted(chain_scores(x, w).items(), key=lambda t: (-t[1], t[0]))[:K]
    y_hat, _ = decode(x, w)
    for weighted in (False, True):
        alts = build_alternatives_kbest(x, w, K, weighted)
        weights = [max(0.0, s) if weighted else 1.0 for _, s in ranked]
        if sum(weights) == 0:
            with pytest.raises(DegenerateWeights):
                agreement_confidence(alts, y_hat)
            continue
        expect = [sum(wt for (z, _), wt in zip(ranked, weights) if z[p] == y_hat[p]) / sum(weights) for p in range(n)]
        assert np.allclose(agreement_confidence(alts, y_hat), expect, atol=1e-12)


def test_kb_exhaustive_is_uniform_fraction():
    # K covering every labeling: agreement = L^(n-1) / L^n at every unit
    rng = np.random.default_rng(1)
    x = random_chain(rng, 3, 3)
    w = rng.normal(size=DIM)
    y_hat, _ = decode(x, w)
    nu = agreement_confidence(build_alternatives_kbest(x, w, 27), y_hat)
    assert np.allclose(nu, 1 / 3)


def test_sampled_alternatives_match_full_vector_decoding():
    rng = np.random.default_rng(3)
    x = random_chain(rng, 4, 3)
    model = model_with(rng.normal(size=DIM), np.full(DIM, 0.5))
    for mode in ("fix", "pc"):
        active, draws = sample_weights(x, model, 6, 0.3, mode, seed=11, instance_id=4)
        alts = build_alternatives_sampled(x, model, 6, 0.3, mode, seed=11, instance_id=4)
        for k in range(6):
            full = model.weights().copy()
            full[active] = draws[k]
            assert alts.labelings[k].tolist() == decode(x, full)[0].tolist()


def test_sampled_tree_alternatives_match_full_vector_decoding():
    rng = np.random.default_rng(4)
    x = random_tree_instance(rng, 4)
    model = model_with(rng.normal(size=15))
    active, draws = sample_weights(x, model, 5, 0.5, "fix", seed=2, instance_id=0)
    alts = build_alternatives_sampled(x, model, 5, 0.5, "fix", seed=2, instance_id=0)
    for k in range(5):
        full = model.weights().copy()
        full[active] = draws[k]
        assert alts.labelings[k].tolist() == decode(x, full)[0].tolist()


def test_sampling_statistics():
    rng = np.random.default_rng(0)
    x = random_chain(rng, 5, 3)
    model = model_with(np.linspace(-1, 1, DIM), np.linspace(0.1, 1.0, DIM))
    active, fix = sample_weights(x, model, 4000, 0.25, "fix", 0, 0)
    _, pc = sample_weights(x, model, 4000, 0.25, "pc", 0, 0)
    mean = model.mu[active]
    assert np.allclose(fix.mean(0), mean, atol=0.05)
    assert np.allclose(fix.var(0), 0.25, rtol=0.1)
    assert np.allclose(pc.var(0), 0.25 * model.sigma_diag[active], rtol=0.1)


def test_sampling_is_seeded_per_instance():
    x = random_chain(np.random.default_rng(0), 4, 3)
    model = model_with(np.zeros(DIM))
    a = sample_weights(x, model, 3, 1.0, "fix", 7, 1)[1]
    b = sample_weights(x, model, 3, 1.0, "fix", 7, 1)[1]
    c = sample_weights(x, model, 3, 1.0, "fix", 7, 2)[1]
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_kd_pc_needs_covariance():
    x = random_chain(np.random.default_rng(0), 2, 2)
    with pytest.raises(ConfigError):
        sample_weights(x, model_with(np.zeros(DIM)), 2, 1.0, "pc", 0, 0)


def test_agreement_values_are_multiples_of_one_over_k():
    rng = np.random.default_rng(8)
    x = random_chain(rng, 5, 3)
    model = model_with(rng.normal(size=DIM))
    _, nu = unit_scores(x, model, ConfidenceConfig("kd_fix", K=20, s=1.0))
    assert np.allclose(nu * 20, np.round(nu * 20))
    assert np.all((0 <= nu) & (nu <= 1))


def test_rank_normalize_orders_infinities_last():
    r = rank_normalize(np.array([3.0, np.inf, 1.0, 3.0]))
    assert r.tolist() == [2.5 / 5, 4 / 5, 1 / 5, 2.5 / 5]


def test_combo_breaks_kd_ties_by_delta():
    kd = [np.array([0.5, 0.5]), np.array([0.5])]
    delta = [np.array([2.0, 0.1]), np.array([np.inf])]
    out = np.concatenate(conf_combo(kd, delta, 0.99))
    assert out[1] < out[0] < out[2]
    assert np.all(out <= 1.0)


def test_score_batch_combo_matches_manual_mix():
    rng = np.random.default_rng(2)
    xs = [random_chain(rng, 4, 3) for _ in range(3)]
    model = model_with(rng.normal(size=DIM))
    cfg = ConfidenceConfig("kd_fix_plus_delta", K=10, s=0.5, seed=3)
    _, combo = score_batch(xs, model, cfg)
    _, kd = score_batch(xs, model, ConfidenceConfig("kd_fix", K=10, s=0.5, seed=3))
    _, delta = score_batch(xs, model, ConfidenceConfig("delta"))
    allkd, alld = np.concatenate(kd), np.concatenate(delta)
    ranks = np.array([(np.sum(alld < v) + (np.sum(alld == v) + 1) / 2) for v in alld]) / (alld.size + 1)
    assert np.allclose(np.concatenate(combo), 0.99 * allkd + 0.01 * ranks)


def test_sentence_confidence_is_minimum():
    assert sentence_confidence([0.9, 0.2, 0.5]) == 0.2
    with pytest.raises(ValueError):
        sentence_confidence([])


def test_alternative_set_validates_weights():
    with pytest.raises(ValueError):
        AlternativeSet(np.zeros((2, 3)), np.array([1.0, -1.0]))


@pytest.mark.parametrize("kwargs", [{"method": "nope"}, {"K": 0}, {"s": 0}, {"c": -1}, {"combo_weight": 1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ConfidenceConfig(**kwargs)


def test_random_scores_are_uniform_and_seeded():
    x = random_chain(np.random.default_rng(0), 6, 3)
    model = model_with(np.zeros(DIM))
    a = unit_scores(x, model, ConfidenceConfig("random", seed=1), 3)[1]
    b = unit_scores(x, model, ConfidenceConfig("random", seed=1), 3)[1]
    assert np.array_equal(a, b) and np.all((a >= 0) & (a < 1))
