import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridgekit.chem import MolecularGraph
from bridgekit.process import (
    BridgeProcess,
    CategoricalKernel,
    GraphState,
    bridge_forward_sample,
    constant_schedule,
    corrupt_token_continuous,
    corrupt_token_discrete,
    cosine_schedule,
    sample_categorical,
    token_reverse_continuous,
    token_reverse_discrete,
)


def three_sigma(p, n):
    return 3 * np.sqrt(p * (1 - p) / n) + 1e-12


@pytest.fixture
def pair():
    # reactants: C-C . O (slots 0..2) with slot 3 dummy; product: C-C-O with 4th slot dummy
    r = MolecularGraph.build([1, 1, 2, 0], [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
    p = MolecularGraph.build([1, 1, 2, 0], [[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]])
    return r, p


# ---------------------------------------------------------------- schedules


def test_cosine_schedule_basic():
    s = cosine_schedule(500)
    assert s.alpha_bars[0] == 1.0
    assert np.all(np.diff(s.alpha_bars) <= 0)
    assert np.all((s.betas[1:] >= 1e-5) & (s.betas[1:] <= 0.999))
    assert 0 < s.alpha_bars[-1] <= 0.05
    np.testing.assert_allclose(s.alpha_bars[1:], np.cumprod(1 - s.betas[1:]))


def test_cosine_schedule_matches_formula_before_clipping():
    T, eps = 100, 0.008
    s = cosine_schedule(T)
    f = lambda u: np.cos((u + eps) / (1 + eps) * np.pi / 2) ** 2
    t = np.arange(1, T // 2)
    np.testing.assert_allclose(s.alpha_bars[t], f(t / T) / f(0), rtol=1e-9)


def test_schedule_rejects_short():
    with pytest.raises(ValueError):
        cosine_schedule(1)


@pytest.mark.parametrize("K", [1, 3, 5, 10])
def test_kernel_closed_form(K):
    s = cosine_schedule(60)
    k = CategoricalKernel(K, s)
    U = np.full((K, K), 1 / K)
    for t in range(0, 61, 7):
        Qb = k.Qbar(t)
        np.testing.assert_allclose(Qb.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(Qb, s.alpha_bars[t] * np.eye(K) + (1 - s.alpha_bars[t]) * U, atol=1e-10)
        if t:
            np.testing.assert_allclose(k.Q(t).sum(axis=1), 1.0, atol=1e-6)


def test_kernel_matches_matrix_power_for_constant_beta():
    s = constant_schedule(20, 0.1)
    k = CategoricalKernel(4, s)
    np.testing.assert_allclose(k.Qbar(20), np.linalg.matrix_power(k.Q(1), 20), atol=1e-12)


# ---------------------------------------------------------------- forward bridge


def test_forward_endpoints_exact(pair):
    r, p = pair
    proc = BridgeProcess(cosine_schedule(50), K_a=3, K_b=5)
    rng = np.random.default_rng(0)
    for _ in range(5):
        g0 = bridge_forward_sample(r, p, 0, proc, rng)
        gT = bridge_forward_sample(r, p, 50, proc, rng)
        assert np.array_equal(g0.atoms[0], r.atom_types) and np.array_equal(g0.bonds[0], r.bond_types)
        assert np.array_equal(gT.atoms[0], p.atom_types) and np.array_equal(gT.bonds[0], p.bond_types)


def test_forward_rejects_bad_step(pair):
    r, p = pair
    proc = BridgeProcess(cosine_schedule(50), K_a=3, K_b=5)
    with pytest.raises(ValueError):
        bridge_forward_sample(r, p, 51, proc, np.random.default_rng(0))
    with pytest.raises(ValueError):
        bridge_forward_sample(r, p, -1, proc, np.random.default_rng(0))


def test_forward_mixture_law_monte_carlo(pair):
    r, p = pair
    T, K_a, K_b, n = 100, 3, 5, 10_000
    proc = BridgeProcess(cosine_schedule(T), K_a=K_a, K_b=K_b)
    reps = GraphState.from_graphs([r] * n)
    prods = GraphState.from_graphs([p] * n)
    draws = proc.forward_sample(reps, prods, T // 2, np.random.default_rng(1))
    lam = (1 - proc.schedule.alpha_bars[T // 2]) / (1 - proc.schedule.alpha_bars[T])
    mu = 0.1 * lam * (1 - lam)
    assert 0 < lam < 1 and mu > 0
    for slot in range(4):
        want = (1 - mu) * ((1 - lam) * np.eye(K_a)[r.atom_types[slot]] + lam * np.eye(K_a)[p.atom_types[slot]]) + mu / K_a
        freq = np.bincount(draws.atoms[:, slot], minlength=K_a) / n
        assert np.all(np.abs(freq - want) <= three_sigma(want, n) + 1e-9)
    # the bond that exists only in the product, and a bond absent at both ends
    for i, j in [(1, 2), (0, 3)]:
        want = (1 - mu) * ((1 - lam) * np.eye(K_b)[r.bond_types[i, j]] + lam * np.eye(K_b)[p.bond_types[i, j]]) + mu / K_b
        freq = np.bincount(draws.bonds[:, i, j], minlength=K_b) / n
        assert np.all(np.abs(freq - want) <= three_sigma(want, n) + 1e-9)
    assert np.array_equal(draws.bonds, np.swapaxes(draws.bonds, 1, 2))
    assert not np.any(draws.bonds[:, np.arange(4), np.arange(4)])


def test_forward_per_example_steps(pair):
    r, p = pair
    proc = BridgeProcess(cosine_schedule(20), K_a=3, K_b=5)
    out = proc.forward_sample(GraphState.from_graphs([r, r]), GraphState.from_graphs([p, p]),
                              np.array([0, 20]), np.random.default_rng(0))
    assert np.array_equal(out.atoms[0], r.atom_types) and np.array_equal(out.bonds[1], p.bond_types)


# ---------------------------------------------------------------- reverse step


def point_mass(g: MolecularGraph, K_a, K_b):
    return np.eye(K_a)[g.atom_types][None], np.eye(K_b)[g.bond_types][None]


def test_reverse_point_mass_recovers_reactants(pair):
    r, p = pair
    T, K_a, K_b, n = 50, 3, 5, 100
    proc = BridgeProcess(cosine_schedule(T), K_a=K_a, K_b=K_b)
    rng = np.random.default_rng(2)
    pa, pb = point_mass(r, K_a, K_b)
    pa, pb = np.repeat(pa, n, 0), np.repeat(pb, n, 0)
    prod = GraphState.from_graphs([p] * n)
    state = GraphState(prod.atoms.copy(), prod.bonds.copy())
    for t in range(T, 0, -1):
        state = proc.reverse_step(pa, pb, state, prod, t, rng)
    hits = [np.array_equal(state.atoms[b], r.atom_types) and np.array_equal(state.bonds[b], r.bond_types)
            for b in range(n)]
    assert np.mean(hits) >= 0.99


def test_reverse_matches_previous_marginal(pair):
    # if x_t ~ p_t(.|g0) and the model is a point mass on g0, x_{t-1} ~ p_{t-1}(.|g0)
    r, p = pair
    T, K_a, K_b, n, t = 40, 3, 5, 20_000, 20
    proc = BridgeProcess(cosine_schedule(T), K_a=K_a, K_b=K_b)
    rng = np.random.default_rng(3)
    reps, prods = GraphState.from_graphs([r] * n), GraphState.from_graphs([p] * n)
    xt = proc.forward_sample(reps, prods, t, rng)
    pa, pb = point_mass(r, K_a, K_b)
    xs = proc.reverse_step(np.repeat(pa, n, 0), np.repeat(pb, n, 0), xt, prods, t, rng)
    want = proc.marginal(r.atom_types, p.atom_types, t - 1, K_a)
    for slot in range(4):
        freq = np.bincount(xs.atoms[:, slot], minlength=K_a) / n
        assert np.all(np.abs(freq - want[slot]) <= three_sigma(want[slot], n) + 1e-9)
    want_b = proc.marginal(r.bond_types, p.bond_types, t - 1, K_b)
    freq = np.bincount(xs.bonds[:, 1, 2], minlength=K_b) / n
    assert np.all(np.abs(freq - want_b[1, 2]) <= three_sigma(want_b[1, 2], n) + 1e-9)


def test_reverse_uniform_model_final_step(pair):
    r, p = pair
    K_a, K_b, n = 3, 5, 20_000
    proc = BridgeProcess(cosine_schedule(10), K_a=K_a, K_b=K_b)
    prods = GraphState.from_graphs([p] * n)
    pa = np.full((n, 4, K_a), 1 / K_a)
    pb = np.full((n, 4, 4, K_b), 1 / K_b)
    out = proc.reverse_step(pa, pb, prods, prods, 1, np.random.default_rng(4))
    freq = np.bincount(out.atoms.ravel(), minlength=K_a) / out.atoms.size
    assert np.all(np.abs(freq - 1 / K_a) <= three_sigma(1 / K_a, out.atoms.size))
    # dummy category reachable: slots can die or be born
    assert np.any(out.atoms == 0) and np.any(out.atoms[:, 3] != 0)


def test_reverse_single_category_identity():
    proc = BridgeProcess(cosine_schedule(10), K_a=1, K_b=1)
    state = GraphState(np.zeros((2, 3), np.int64), np.zeros((2, 3, 3), np.int64))
    pa, pb = np.ones((2, 3, 1)), np.ones((2, 3, 3, 1))
    rng = np.random.default_rng(0)
    for t in range(10, 0, -1):
        state = proc.reverse_step(pa, pb, state, state, t, rng)
        assert not state.atoms.any() and not state.bonds.any()


def test_reverse_rejects_unnormalized(pair):
    r, p = pair
    proc = BridgeProcess(cosine_schedule(10), K_a=3, K_b=5)
    pa, pb = point_mass(r, 3, 5)
    s = GraphState.from_graphs([p])
    with pytest.raises(ValueError):
        proc.reverse_step(pa * 1.01, pb, s, s, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        proc.reverse_step(pa, pb, s, s, 0, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(K=st.integers(2, 6), t=st.integers(2, 30), seed=st.integers(0, 10_000))
def test_reverse_kernel_rows_normalized(K, t, seed):
    rng = np.random.default_rng(seed)
    proc = BridgeProcess(cosine_schedule(30), K_a=K, K_b=K)
    S = 12
    model = rng.dirichlet(np.ones(K), size=S)
    x = rng.integers(0, K, S)
    gT = rng.integers(0, K, S)
    probs = proc._reverse_probs(model, x, gT, t, K)
    assert np.all(probs >= -1e-12)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(K=st.integers(1, 6), t=st.integers(0, 30), g0=st.integers(0, 5), gT=st.integers(0, 5))
def test_marginal_is_distribution(K, t, g0, gT):
    proc = BridgeProcess(cosine_schedule(30), K_a=K, K_b=K)
    m = proc.marginal(np.array([g0 % K]), np.array([gT % K]), t, K)
    assert np.all(m >= 0)
    np.testing.assert_allclose(m.sum(), 1.0, atol=1e-12)


# ---------------------------------------------------------------- tokens


def test_discrete_token_zero_beta_identity():
    s = constant_schedule(20, 0.0)
    k = CategoricalKernel(10, s)
    z0 = np.arange(1, 11)
    for t in (1, 10, 20):
        assert np.array_equal(corrupt_token_discrete(z0, t, k, np.random.default_rng(t)), z0)


def test_discrete_token_stay_probability_monte_carlo():
    s = cosine_schedule(500)
    k = CategoricalKernel(10, s)
    n = 10_000
    z = corrupt_token_discrete(np.full(n, 3), 500, k, np.random.default_rng(5))
    oracle = np.linalg.multi_dot([k.Q(t) for t in range(1, 501)])[2, 2]
    stay = np.mean(z == 3)
    assert abs(stay - oracle) <= three_sigma(oracle, n)
    assert z.min() >= 1 and z.max() <= 10


def test_discrete_token_rejects_bad_class():
    k = CategoricalKernel(10, cosine_schedule(10))
    with pytest.raises(ValueError):
        corrupt_token_discrete([11], 3, k, np.random.default_rng(0))


def test_continuous_token_identity_at_zero():
    s = cosine_schedule(50)
    z0 = np.ones(16) / 4.0
    np.testing.assert_array_equal(corrupt_token_continuous(z0, 0, s, np.random.default_rng(0)), z0)


def test_continuous_token_moments():
    s = cosine_schedule(100)
    rng = np.random.default_rng(6)
    z0 = rng.standard_normal(16)
    z0 /= np.linalg.norm(z0)
    t, n = 40, 10_000
    zt = corrupt_token_continuous(np.tile(z0, (n, 1)), t, s, rng)
    ab = s.alpha_bars[t]
    sd_mean = np.sqrt((1 - ab) / n)
    assert np.all(np.abs(zt.mean(0) - np.sqrt(ab) * z0) <= 3 * sd_mean)
    sd_var = (1 - ab) * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(zt.var(0, ddof=1) - (1 - ab)) <= 3 * sd_var + 1e-3)


def test_token_reverse_point_mass():
    s = cosine_schedule(30)
    k = CategoricalKernel(10, s)
    rng = np.random.default_rng(7)
    n = 200
    probs = np.zeros((n, 10))
    probs[:, 6] = 1.0
    z = rng.integers(1, 11, n)
    for t in range(30, 0, -1):
        z = token_reverse_discrete(probs, z, t, k, rng)
    assert np.all(z == 7)
    zc = rng.standard_normal((n, 16))
    target = np.ones(16) / 4.0
    for t in range(30, 0, -1):
        zc = token_reverse_continuous(np.tile(target, (n, 1)), zc, t, s, rng)
    np.testing.assert_allclose(zc, np.tile(target, (n, 1)))


def test_sample_categorical_point_masses():
    probs = np.eye(4)
    assert np.array_equal(sample_categorical(probs, np.random.default_rng(0)), np.arange(4))
