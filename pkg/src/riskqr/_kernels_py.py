"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` one for one and are used whenever the compiled
module is missing or ``RISKQR_BACKEND=python`` is set.
"""
import numpy as np

_INV_SQRT_2PI = 0.3989422804014327
_KDE_CHUNK = 1 << 18


def qr_loss_batch(pred, target, taus, kappa, norm):
    """Per-sample quantile Huber loss and its gradient w.r.t. ``pred``.

    ``pred`` and ``target`` are (B, N); entry [b, n, j] of the residual cube is
    ``target[b, j] - pred[b, n]``. Returns ``(losses (B,), grad (B, N))``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    m = target[:, None, :] - pred[:, :, None]
    abs_m = np.abs(m)
    inner = abs_m <= kappa
    hub = np.where(inner, 0.5 * m * m, kappa * (abs_m - 0.5 * kappa))
    weight = np.abs(taus[None, :, None] - (m < 0.0))
    losses = norm * np.sum(weight * hub, axis=(1, 2))
    dhub = np.where(inner, m, kappa * np.sign(m))
    grad = -norm * np.sum(weight * dhub, axis=2)
    return losses, grad


def kde_pdf(samples, h, grid):
    samples = np.asarray(samples, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    out = np.empty(grid.shape[0])
    step = max(1, _KDE_CHUNK // max(1, samples.shape[0]))
    for lo in range(0, grid.shape[0], step):
        u = (grid[lo:lo + step, None] - samples[None, :]) / h
        out[lo:lo + step] = np.exp(-0.5 * u * u).sum(axis=1)
    return out * (_INV_SQRT_2PI / (samples.shape[0] * h))


def lidar_scan(px, py, theta, centers, n_bins, max_range):
    out = np.zeros(n_bins)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if centers.shape[0] == 0:
        return out
    dx = centers[:, 0] - px
    dy = centers[:, 1] - py
    dist = np.sqrt(dx * dx + dy * dy)
    near = dist < max_range
    if not near.any():
        return out
    width = 2.0 * np.pi / n_bins
    bearing = np.arctan2(dy[near], dx[near]) - theta
    bins = np.floor(bearing / width + 0.5).astype(np.int64) % n_bins
    np.maximum.at(out, bins, 1.0 - dist[near] / max_range)
    return out
