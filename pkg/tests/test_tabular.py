import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskqr import tabular
from riskqr.tabular import (CostMap, FiniteDistribution as FD, FiniteMdp, apply_bellman_risk,
                            contraction_trial, cvar_finite, finite_w1, finite_winf,
                            fixed_point_iterate, lipschitz_ratios, nonexpansiveness_probe,
                            random_distribution, random_mdp, random_z, sup_w1, var_finite)


def dist_strategy():
    return st.integers(0, 2 ** 31).map(lambda s: random_distribution(np.random.default_rng(s)))


def enum_cvar(d, beta):
    """Tail mean by walking atoms from the top until 1 - beta mass is collected."""
    atoms, probs = d.atoms, d.probs
    order = np.argsort(atoms)[::-1]
    need = 1.0 - beta
    acc = total = 0.0
    for i in order:
        take = min(probs[i], need - acc)
        if take <= 0:
            break
        acc += take
        total += take * atoms[i]
    return total / (1.0 - beta)


def test_distribution_validation():
    with pytest.raises(ValueError):
        FD([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        FD([0.0], [-1.0])
    with pytest.raises(ValueError):
        FD([], [])
    d = FD.merged([1.0, 0.0, 1.0, 2.0], [0.25, 0.25, 0.5, 0.0])
    assert d.atoms.tolist() == [0.0, 1.0] and d.probs.tolist() == [0.25, 0.75]


def test_w1_examples():
    d = FD([0.0, 1.0], [0.3, 0.7])
    assert finite_w1(d, d) == 0.0
    assert finite_w1(FD.point(0), FD.point(1)) == 1.0
    assert finite_w1(FD([0, 2], [0.5, 0.5]), FD([1, 3], [0.5, 0.5])) == 1.0


def test_w1_matches_scipy():
    from scipy.stats import wasserstein_distance
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = random_distribution(rng), random_distribution(rng)
        ref = wasserstein_distance(a.atoms, b.atoms, a.probs, b.probs)
        assert finite_w1(a, b) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=200)
@given(dist_strategy(), dist_strategy(), dist_strategy())
def test_w1_metric(a, b, c):
    assert finite_w1(a, b) == pytest.approx(finite_w1(b, a), abs=1e-15)
    assert finite_w1(a, a) == 0.0
    assert finite_w1(a, c) <= finite_w1(a, b) + finite_w1(b, c) + 1e-12
    assert finite_w1(a, b) <= finite_winf(a, b) + 1e-12


def test_cvar_examples():
    assert cvar_finite(FD.point(0.4), 0.9) == pytest.approx(0.4)
    assert cvar_finite(FD([0, 10], [0.9, 0.1]), 0.9) == pytest.approx(10.0)
    assert cvar_finite(FD(np.arange(1, 11), np.full(10, 0.1)), 0.5) == pytest.approx(8.0)
    assert var_finite(FD([0, 10], [0.9, 0.1]), 0.5) == 0.0
    with pytest.raises(ValueError):
        cvar_finite(FD.point(0), 1.0)


def test_cvar_enumeration_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = FD(rng.uniform(size=8), rng.dirichlet(np.ones(8)))
        for beta in (0.1, 0.5, 0.9, 0.95):
            assert cvar_finite(d, beta) == pytest.approx(enum_cvar(d, beta), abs=1e-12)


@settings(max_examples=200)
@given(dist_strategy(), st.floats(0.01, 0.9))
def test_cvar_monotone_bounded(d, beta):
    lo, hi = cvar_finite(d, beta), cvar_finite(d, min(beta + 0.05, 0.99))
    assert hi >= lo - 1e-12
    assert d.atoms.min() - 1e-12 <= lo <= d.atoms.max() + 1e-12


def test_cost_map():
    psi = CostMap()
    np.testing.assert_array_equal(psi(np.array([-1.0, 0.5, 2.0])), [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        CostMap(mode="exp")


def test_mdp_validation():
    k = np.ones((2, 1, 2)) / 2
    with pytest.raises(ValueError):
        FiniteMdp(k, np.zeros((2, 1)), np.ones((2, 1)), 1.0)
    with pytest.raises(ValueError):
        FiniteMdp(k * 2, np.zeros((2, 1)), np.ones((2, 1)), 0.5)


def brute_force(mdp, z, beta, psi):
    out = {}
    for x, u in itertools.product(range(mdp.n_states), range(mdp.n_actions)):
        atoms, probs = [], []
        for x2, u2 in itertools.product(range(mdp.n_states), range(mdp.n_actions)):
            d = z[x2][u2]
            mapped = FD.merged(psi(d.atoms), d.probs)
            atoms.append(mdp.cost[x, u] - mdp.gamma * enum_cvar(mapped, beta))
            probs.append(mdp.kernel[x, u, x2] * mdp.policy[x2, u2])
        out[x, u] = FD.merged(atoms, probs)
    return out


def test_operator_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(10):
        mdp = random_mdp(rng, 2, 2, 0.9)
        z = random_z(rng, 2, 2)
        t = apply_bellman_risk(mdp, z, 0.9, CostMap())
        ref = brute_force(mdp, z, 0.9, CostMap())
        for (x, u), d in ref.items():
            assert finite_w1(t[x][u], d) < 1e-12


def test_operator_deterministic_and_gamma_zero():
    k = np.zeros((2, 1, 2))
    k[0, 0, 1] = k[1, 0, 0] = 1.0
    mdp = FiniteMdp(k, np.array([[0.3], [0.7]]), np.ones((2, 1)), 0.5)
    z = [[FD.point(0.4)], [FD.point(0.8)]]
    t = apply_bellman_risk(mdp, z, 0.9, CostMap())
    assert t[0][0].atoms.tolist() == [pytest.approx(0.3 - 0.5 * 0.8)]
    rng = np.random.default_rng(3)
    mdp0 = random_mdp(rng, 3, 2, 0.0)
    t = apply_bellman_risk(mdp0, random_z(rng, 3, 2), 0.9, CostMap())
    for x in range(3):
        for u in range(2):
            assert t[x][u].atoms.tolist() == [mdp0.cost[x, u]]


def test_operator_bounds_and_normalization():
    rng = np.random.default_rng(4)
    for _ in range(20):
        mdp = random_mdp(rng, 4, 3, 0.9)
        t = apply_bellman_risk(mdp, random_z(rng, 4, 3), 0.95, CostMap(1.0))
        for row in t:
            for d in row:
                assert abs(d.probs.sum() - 1.0) < 1e-12 and np.all(np.isfinite(d.atoms))
                assert d.atoms.min() >= mdp.cost.min() - 0.9 - 1e-12
                assert d.atoms.max() <= mdp.cost.max() + 1e-12


def test_contraction_trial_cases():
    r = contraction_trial(0, 0.9, 0.0, 3, 2)
    assert r.passed and r.ratio == 0.0
    rng = np.random.default_rng(5)
    mdp = random_mdp(rng, 2, 2, 0.9)
    z = random_z(rng, 2, 2)
    same = tabular._trial(mdp, z, z, 0.9, CostMap(), 0)
    assert same.skipped and same.passed
    with pytest.raises(ValueError):
        contraction_trial(0, 0.9, 0.9, 6, 2)
    res = [contraction_trial(s, 0.9, 0.99) for s in range(30)]
    assert all(r.ratio_winf <= 0.99 + 1e-9 for r in res)


def test_fixed_point_gamma_zero():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, 5, 3, 0.0)
    fp = fixed_point_iterate(mdp, 0.9)
    assert fp.converged and fp.iterations == 1
    for x in range(5):
        for u in range(3):
            assert fp.z[x][u].atoms.tolist() == [mdp.cost[x, u]]


def test_fixed_point_two_starts():
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, 5, 3, 0.8)
    a = fixed_point_iterate(mdp, 0.9)
    b = fixed_point_iterate(mdp, 0.9, init=random_z(rng, 5, 3))
    assert a.converged and b.converged
    assert sup_w1(a.z, b.z) < 2e-6
    tr = np.array(a.trace)
    assert np.all(tr[4:] / tr[3:-1] <= 0.8 + 0.01)
    with pytest.raises(ValueError):
        fixed_point_iterate(mdp, 0.9, tol=0.0)


def test_probe_identity_and_shift():
    d = random_distribution(np.random.default_rng(8))
    assert lipschitz_ratios(d, d, 0.9) is None
    shifted = FD(d.atoms + 0.37, d.probs)
    r1, rinf = lipschitz_ratios(d, shifted, 0.9)
    assert r1 == pytest.approx(1.0, abs=1e-12) and rinf == pytest.approx(1.0, abs=1e-12)


def test_probe_winf_bound():
    stats = nonexpansiveness_probe(0.9, 2000, seed=0)
    assert stats.evaluated > 1900
    assert stats.max_winf_ratio <= 1 + 1e-9
    assert stats.max_w1_ratio <= 1 / (1 - 0.9) + 1e-9
    with pytest.raises(ValueError):
        nonexpansiveness_probe(0.9, 0, 0)
