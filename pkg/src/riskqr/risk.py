"""Quantile-regression losses, KDE cost densities and tail-risk statistics."""
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_GRID_SIZE = 512
BANDWIDTH_FLOOR = 1e-3
DEGENERATE_TAIL_MASS = 1e-9


@dataclass(frozen=True)
class RiskConfig:
    beta: float = 0.9
    c_max: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.c_max < 0.0:
            raise ValueError(f"c_max must be non-negative, got {self.c_max}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")


def make_tau_grid(n_tau):
    """Quantile midpoints ``(n + 0.5) / n_tau`` for ``n = 0 .. n_tau - 1``."""
    n_tau = int(n_tau)
    if n_tau < 1:
        raise ValueError("n_tau must be >= 1")
    return (np.arange(n_tau, dtype=np.float64) + 0.5) / n_tau


def huber(m, kappa):
    m = np.asarray(m, dtype=np.float64)
    am = np.abs(m)
    out = np.where(am <= kappa, 0.5 * m * m, kappa * (am - 0.5 * kappa))
    return out[()] if out.ndim == 0 else out


def huber_grad(m, kappa):
    m = np.asarray(m, dtype=np.float64)
    out = np.where(np.abs(m) <= kappa, m, kappa * np.sign(m))
    return out[()] if out.ndim == 0 else out


def quantile_huber(m, tau, kappa):
    """Asymmetric Huber loss: residuals below zero are weighted by ``1 - tau``."""
    m = np.asarray(m, dtype=np.float64)
    out = np.abs(tau - (m < 0.0)) * huber(m, kappa)
    return out[()] if np.ndim(out) == 0 else out


def quantile_huber_grad(m, tau, kappa):
    """Derivative of :func:`quantile_huber` with respect to the residual."""
    m = np.asarray(m, dtype=np.float64)
    out = np.abs(tau - (m < 0.0)) * huber_grad(m, kappa)
    return out[()] if np.ndim(out) == 0 else out


def _qr_norm(n_tau, normalization):
    if normalization == "mean":
        return 1.0 / (n_tau * n_tau)
    if normalization == "literal":
        return 1.0 / n_tau
    raise ValueError(f"unknown normalization {normalization!r}")


def qr_loss(pred, targets, taus, kappa=1.0, normalization="mean"):
    """Quantile regression loss of one predicted quantile set against targets.

    Every predicted quantile ``pred[n]`` is regressed on every target atom
    ``targets[j]``. ``normalization="mean"`` divides the double sum by
    ``N**2``; ``"literal"`` divides by ``N`` only. Targets are constants.

    Returns ``(loss, grad)`` with ``grad[n] = d loss / d pred[n]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    if pred.ndim != 1 or pred.shape != targets.shape or pred.shape != taus.shape:
        raise ValueError(
            f"size mismatch: pred {pred.shape}, targets {targets.shape}, taus {taus.shape}"
        )
    losses, grad = qr_loss_batch(pred[None, :], targets[None, :], taus, kappa, normalization)
    return float(losses[0]), grad[0]


def qr_loss_batch(pred, targets, taus, kappa=1.0, normalization="mean"):
    """Per-sample losses (B,) and per-sample gradients (B, N) for a batch."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if pred.ndim != 2 or pred.shape != targets.shape or pred.shape[1] != len(taus):
        raise ValueError(
            f"size mismatch: pred {pred.shape}, targets {targets.shape}, taus {len(taus)}"
        )
    norm = _qr_norm(pred.shape[1], normalization)
    return kernels.qr_loss_batch(pred, targets, taus, float(kappa), norm)


@dataclass(frozen=True)
class KdeEstimate:
    """Gaussian KDE tabulated on a uniform grid.

    ``cdf`` is the trapezoid running integral of ``pdf`` rescaled so that its
    last entry is exactly one.
    """

    samples: np.ndarray
    bandwidth: float
    grid: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    kernel: str = "gaussian"

    @property
    def integral(self):
        return float(np.trapezoid(self.pdf, self.grid))

    def evaluate(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return kernels.kde_pdf(self.samples, self.bandwidth, x)


def select_bandwidth(samples, rule="scott"):
    """Bandwidth for ``samples``.

    ``"scott"`` is ``std * B**(-1/5)``; ``"paper_literal"`` is ``B**0.2``; a
    number is used as a fixed bandwidth. Results are floored at 1e-3.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    if isinstance(rule, str):
        if rule == "scott":
            sigma = float(np.std(samples, ddof=1)) if n > 1 else 0.0
            h = sigma * n ** (-0.2)
        elif rule == "paper_literal":
            h = n ** 0.2
        else:
            raise ValueError(f"unknown bandwidth rule {rule!r}")
        return max(h, BANDWIDTH_FLOOR)
    h = float(rule)
    if not h > 0.0:
        raise ValueError(f"fixed bandwidth must be positive, got {h}")
    return h


def kde_fit(samples, bandwidth="scott", grid_size=DEFAULT_GRID_SIZE):
    samples = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if samples.size == 0:
        raise ValueError("kde_fit needs at least one sample")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    grid_size = int(grid_size)
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    h = select_bandwidth(samples, bandwidth)
    grid = np.linspace(samples[0] - 4.0 * h, samples[-1] + 4.0 * h, grid_size)
    pdf = kernels.kde_pdf(samples, h, grid)
    dx = np.diff(grid)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * dx)))
    cdf /= cdf[-1]
    samples.setflags(write=False)
    grid.setflags(write=False)
    pdf.setflags(write=False)
    cdf.setflags(write=False)
    return KdeEstimate(samples=samples, bandwidth=h, grid=grid, pdf=pdf, cdf=cdf)


def expected_cost(samples):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("expected_cost needs at least one sample")
    return float(samples.mean())


def _check_beta(beta):
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


def _var_index(est, beta):
    idx = int(np.searchsorted(est.cdf, beta, side="left"))
    return min(idx, est.grid.shape[0] - 1)


def var_beta(est, beta):
    """Smallest grid abscissa whose CDF reaches ``beta``."""
    _check_beta(beta)
    return float(est.grid[_var_index(est, beta)])


def cvar_with_flag(est, beta):
    """Return ``(cvar, degenerate)``; a degenerate tail yields the grid top."""
    _check_beta(beta)
    i = _var_index(est, beta)
    x = est.grid[i:]
    p = est.pdf[i:]
    if x.shape[0] < 2:
        return float(est.grid[-1]), True
    mass = np.trapezoid(p, x)
    if mass < DEGENERATE_TAIL_MASS:
        return float(est.grid[-1]), True
    value = float(np.trapezoid(x * p, x) / mass)
    # quadrature can land a hair under the left endpoint
    return max(value, float(x[0])), False


def cvar_beta(est, beta):
    return cvar_with_flag(est, beta)[0]


def risk_penalty(rho, c_max):
    """Hinge-then-square penalty ``max(0, rho - c_max) ** 2``."""
    excess = max(0.0, float(rho) - float(c_max))
    return excess * excess


def wasserstein1_atoms(a, b):
    """W1 between two equal-size, equal-weight atom sets (sorted matching)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.shape != b.shape or a.size == 0:
        raise ValueError(f"need equal non-empty sizes, got {a.size} and {b.size}")
    return float(np.mean(np.abs(a - b)))
