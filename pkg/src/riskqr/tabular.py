"""Exact finite-support checks of the risk-sensitive distributional Bellman operator.

Return distributions are finite atom/probability lists, so Wasserstein
distances and CVaR are computed exactly rather than sampled.
"""
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12
MAX_ATOMS = 8


@dataclass(frozen=True)
class FiniteDistribution:
    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64).ravel()
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        if a.shape != p.shape or a.size == 0:
            raise ValueError("atoms and probs must be non-empty and equally long")
        if not np.all(np.isfinite(a)):
            raise ValueError("atoms must be finite")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > PROB_TOL * max(1, a.size):
            raise ValueError(f"probs must be non-negative and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, x):
        return cls(np.array([float(x)]), np.array([1.0]))

    @classmethod
    def merged(cls, atoms, probs):
        """Sort atoms, merge exact duplicates and drop zero-probability atoms."""
        atoms = np.asarray(atoms, dtype=np.float64).ravel()
        probs = np.asarray(probs, dtype=np.float64).ravel()
        order = np.argsort(atoms, kind="stable")
        atoms, probs = atoms[order], probs[order]
        uniq, inv = np.unique(atoms, return_inverse=True)
        summed = np.zeros(uniq.size)
        np.add.at(summed, inv, probs)
        keep = summed > 0.0
        summed = summed[keep]
        return cls(uniq[keep], summed / summed.sum())

    def mean(self):
        return float(self.atoms @ self.probs)

    def map_atoms(self, fn):
        return FiniteDistribution.merged(fn(self.atoms), self.probs)


def _quantile_steps(d):
    order = np.argsort(d.atoms, kind="stable")
    return d.atoms[order], np.cumsum(d.probs[order])


def _quantile_segments(d1, d2):
    """Piecewise-constant pieces of the two quantile functions on (0, 1].

    Returns ``(lengths, q1, q2)``: on each piece of width ``lengths[k]`` the
    quantile functions equal ``q1[k]`` and ``q2[k]``.
    """
    a1, c1 = _quantile_steps(d1)
    a2, c2 = _quantile_steps(d2)
    c1[-1] = c2[-1] = 1.0
    bps = np.union1d(c1, c2)
    bps = bps[bps > 0.0]
    lengths = np.diff(np.concatenate(([0.0], bps)))
    mids = bps - 0.5 * lengths
    i1 = np.minimum(np.searchsorted(c1, mids, side="left"), a1.size - 1)
    i2 = np.minimum(np.searchsorted(c2, mids, side="left"), a2.size - 1)
    return lengths, a1[i1], a2[i2]


def finite_w1(d1, d2):
    """W1 as the integral of |F1^-1 - F2^-1| over the merged breakpoints."""
    lengths, q1, q2 = _quantile_segments(d1, d2)
    return float(np.sum(lengths * np.abs(q1 - q2)))


def finite_winf(d1, d2):
    lengths, q1, q2 = _quantile_segments(d1, d2)
    pos = lengths > 0.0
    return float(np.max(np.abs(q1 - q2)[pos]))


def cvar_finite(d, beta):
    """Exact CVaR with the boundary atom split so exactly ``1 - beta`` mass is averaged."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    atoms, cdf = _quantile_steps(d)
    cdf[-1] = 1.0
    k = min(int(np.searchsorted(cdf, beta - PROB_TOL, side="left")), atoms.size - 1)
    probs = np.diff(np.concatenate(([0.0], cdf)))
    tail = (cdf[k] - beta) * atoms[k] + float(probs[k + 1:] @ atoms[k + 1:])
    value = tail / (1.0 - beta)
    return float(min(max(value, atoms[0]), atoms[-1]))


def var_finite(d, beta):
    atoms, cdf = _quantile_steps(d)
    cdf[-1] = 1.0
    k = min(int(np.searchsorted(cdf, beta - PROB_TOL, side="left")), atoms.size - 1)
    return float(atoms[k])


@dataclass(frozen=True)
class CostMap:
    """Clamp ``z`` into ``[0, c_bound]``: 1-Lipschitz, bounded, non-negative."""

    c_bound: float = 1.0
    mode: str = "clamp"

    def __post_init__(self):
        if self.mode != "clamp":
            raise ValueError(f"unsupported cost map {self.mode!r}")
        if not self.c_bound > 0.0:
            raise ValueError("c_bound must be positive")

    def __call__(self, z):
        return np.clip(z, 0.0, self.c_bound)


@dataclass(frozen=True)
class FiniteMdp:
    kernel: np.ndarray  # (S, A, S): P(x' | x, u)
    cost: np.ndarray  # (S, A)
    policy: np.ndarray  # (S, A): mu(u | x)
    gamma: float

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        c = np.asarray(self.cost, dtype=np.float64)
        p = np.asarray(self.policy, dtype=np.float64)
        s, a = c.shape
        if k.shape != (s, a, s) or p.shape != (s, a):
            raise ValueError("kernel, cost and policy shapes disagree")
        if np.any(k < 0) or not np.allclose(k.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("kernel rows must be probability vectors")
        if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("policy rows must be probability vectors")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "policy", p)

    @property
    def n_states(self):
        return self.cost.shape[0]

    @property
    def n_actions(self):
        return self.cost.shape[1]


def random_mdp(rng, n_states, n_actions, gamma):
    """Dirichlet(1) kernel rows, U[0, 1] stage costs, uniform policy."""
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    cost = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    policy = np.full((n_states, n_actions), 1.0 / n_actions)
    return FiniteMdp(kernel, cost, policy, gamma)


def random_distribution(rng, max_atoms=MAX_ATOMS, low=0.0, high=1.0):
    n = int(rng.integers(1, max_atoms + 1))
    return FiniteDistribution.merged(rng.uniform(low, high, size=n), rng.dirichlet(np.ones(n)))


def random_z(rng, n_states, n_actions, max_atoms=MAX_ATOMS):
    return [[random_distribution(rng, max_atoms) for _ in range(n_actions)] for _ in range(n_states)]


def zero_z(n_states, n_actions):
    return [[FiniteDistribution.point(0.0) for _ in range(n_actions)] for _ in range(n_states)]


def risk_table(z, beta, psi):
    """CVaR of the cost-mapped distribution for every (x, u)."""
    return np.array([[cvar_finite(d.map_atoms(psi), beta) for d in row] for row in z])


def apply_bellman_risk(mdp, z, beta, psi):
    """One application of ``Z(x,u) <- g(x,u) - gamma * CVaR(psi(Z(x', u')))``.

    The result at ``(x, u)`` mixes one atom per successor pair ``(x', u')``
    with weight ``P(x'|x,u) * mu(u'|x')``.
    """
    rho = risk_table(z, beta, psi)
    weights = mdp.kernel[:, :, :, None] * mdp.policy[None, None, :, :]
    out = []
    for x in range(mdp.n_states):
        row = []
        for u in range(mdp.n_actions):
            atoms = mdp.cost[x, u] - mdp.gamma * rho
            row.append(FiniteDistribution.merged(atoms.ravel(), weights[x, u].ravel()))
        out.append(row)
    return out


def sup_w1(z1, z2):
    return max(finite_w1(a, b) for r1, r2 in zip(z1, z2) for a, b in zip(r1, r2))


def sup_winf(z1, z2):
    return max(finite_winf(a, b) for r1, r2 in zip(z1, z2) for a, b in zip(r1, r2))


@dataclass
class TrialResult:
    seed: int
    beta: float
    gamma: float
    n_states: int
    n_actions: int
    ratio: float
    passed: bool
    skipped: bool
    ratio_winf: float = float("nan")


def contraction_trial(seed, beta, gamma, n_states=5, n_actions=3, psi=None):
    """Compare ``sup W1(T Z1, T Z2)`` with ``sup W1(Z1, Z2)`` on a random instance.

    Also records the same ratio under the sup-quantile (W-infinity) metric.
    """
    if not (1 <= n_states <= 5 and 1 <= n_actions <= 3):
        raise ValueError("need 1 <= n_states <= 5 and 1 <= n_actions <= 3")
    psi = psi or CostMap()
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states, n_actions, gamma)
    z1 = random_z(rng, n_states, n_actions)
    z2 = random_z(rng, n_states, n_actions)
    return _trial(mdp, z1, z2, beta, psi, seed)


def _trial(mdp, z1, z2, beta, psi, seed):
    before = sup_w1(z1, z2)
    if before < 1e-12:
        return TrialResult(seed, beta, mdp.gamma, mdp.n_states, mdp.n_actions,
                           float("nan"), True, True)
    t1 = apply_bellman_risk(mdp, z1, beta, psi)
    t2 = apply_bellman_risk(mdp, z2, beta, psi)
    ratio = sup_w1(t1, t2) / before
    winf_before = sup_winf(z1, z2)
    ratio_inf = sup_winf(t1, t2) / winf_before
    return TrialResult(seed, beta, mdp.gamma, mdp.n_states, mdp.n_actions, ratio,
                       ratio <= mdp.gamma + 1e-9, False, ratio_inf)


@dataclass
class FixedPointResult:
    z: list
    iterations: int
    trace: list
    converged: bool


def fixed_point_iterate(mdp, beta, psi=None, tol=1e-6, max_iter=500, init=None):
    """Iterate the operator from ``init`` (default: point masses at 0).

    Stops once two successive iterates are within ``tol`` in sup-W1.
    ``iterations`` counts the applications needed to reach that iterate; the
    final confirming application is not counted, so an operator that lands on
    its fixed point immediately reports 1.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    psi = psi or CostMap()
    z = init if init is not None else zero_z(mdp.n_states, mdp.n_actions)
    trace = []
    for it in range(1, max_iter + 1):
        nxt = apply_bellman_risk(mdp, z, beta, psi)
        dist = sup_w1(nxt, z)
        trace.append(dist)
        z = nxt
        if dist < tol:
            return FixedPointResult(z, max(it - 1, 1), trace, True)
    return FixedPointResult(z, max_iter, trace, False)


@dataclass
class ProbeStats:
    beta: float
    trials: int
    evaluated: int
    max_w1_ratio: float
    mean_w1_ratio: float
    frac_w1_le_1: float
    max_winf_ratio: float
    mean_winf_ratio: float
    frac_winf_le_1: float
    ratios_w1: list = field(repr=False, default_factory=list)
    ratios_winf: list = field(repr=False, default_factory=list)


def lipschitz_ratios(d1, d2, beta):
    """``|CVaR(d1) - CVaR(d2)|`` divided by W1 and by W-infinity, or None if identical."""
    w1 = finite_w1(d1, d2)
    winf = finite_winf(d1, d2)
    if w1 < 1e-15 or winf < 1e-15:
        return None
    diff = abs(cvar_finite(d1, beta) - cvar_finite(d2, beta))
    return diff / w1, diff / winf


def nonexpansiveness_probe(beta, trials, seed):
    """Empirical Lipschitz constant of CVaR under W1 and W-infinity."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    r1, rinf = [], []
    for _ in range(trials):
        d1 = random_distribution(rng)
        d2 = random_distribution(rng)
        out = lipschitz_ratios(d1, d2, beta)
        if out is None:
            continue
        r1.append(out[0])
        rinf.append(out[1])
    a1 = np.array(r1) if r1 else np.array([np.nan])
    ainf = np.array(rinf) if rinf else np.array([np.nan])
    return ProbeStats(
        beta=beta, trials=trials, evaluated=len(r1),
        max_w1_ratio=float(np.max(a1)), mean_w1_ratio=float(np.mean(a1)),
        frac_w1_le_1=float(np.mean(a1 <= 1.0 + 1e-9)),
        max_winf_ratio=float(np.max(ainf)), mean_winf_ratio=float(np.mean(ainf)),
        frac_winf_le_1=float(np.mean(ainf <= 1.0 + 1e-9)),
        ratios_w1=r1, ratios_winf=rinf,
    )
