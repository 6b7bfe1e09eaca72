# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, atan2, floor, M_PI

cnp.import_array()

cdef double INV_SQRT_2PI = 0.3989422804014327


def qr_loss_batch(pred, target, taus, double kappa, double norm):
    cdef const double[:, ::1] p = np.ascontiguousarray(pred, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(target, dtype=np.float64)
    cdef const double[::1] tau = np.ascontiguousarray(taus, dtype=np.float64)
    cdef Py_ssize_t nb = p.shape[0], nq = p.shape[1], nt = y.shape[1]
    losses = np.zeros(nb)
    grad = np.zeros((nb, nq))
    cdef double[::1] lv = losses
    cdef double[:, ::1] gv = grad
    cdef Py_ssize_t b, n, j
    cdef double m, am, w, hub, dhub, acc, gacc
    for b in range(nb):
        acc = 0.0
        for n in range(nq):
            gacc = 0.0
            for j in range(nt):
                m = y[b, j] - p[b, n]
                am = fabs(m)
                if m < 0.0:
                    w = fabs(tau[n] - 1.0)
                else:
                    w = fabs(tau[n])
                if am <= kappa:
                    hub = 0.5 * m * m
                    dhub = m
                else:
                    hub = kappa * (am - 0.5 * kappa)
                    dhub = kappa if m > 0.0 else -kappa
                acc += w * hub
                gacc += w * dhub
            gv[b, n] = -norm * gacc
        lv[b] = norm * acc
    return losses, grad


cdef bint _uniform(const double[::1] g, double d):
    cdef Py_ssize_t i
    cdef double tol = 1e-10 * fabs(d)
    for i in range(g.shape[0]):
        if fabs(g[i] - (g[0] + i * d)) > tol:
            return False
    return True


def kde_pdf(samples, double h, grid):
    cdef const double[::1] s = np.ascontiguousarray(samples, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t ns = s.shape[0], ng = g.shape[0], i, k, i0
    out = np.zeros(ng)
    cdef double[::1] ov = out
    cdef double x, u, acc, d, delta, q, t, term, ratio
    cdef double scale = INV_SQRT_2PI / (ns * h)
    d = (g[ng - 1] - g[0]) / (ng - 1) if ng > 2 else 0.0
    if ng > 2 and d > 0.0 and _uniform(g, d):
        # On a uniform grid neighbouring Gaussian terms differ by a factor that
        # itself shrinks geometrically, so only one exp per sample is needed.
        # Walk outward from the nearest grid point until the terms underflow.
        delta = d / h
        q = exp(-delta * delta)
        for k in range(ns):
            i0 = <Py_ssize_t> floor((s[k] - g[0]) / d + 0.5)
            if i0 < 0:
                i0 = 0
            elif i0 > ng - 1:
                i0 = ng - 1
            t = (g[i0] - s[k]) / h
            term = exp(-0.5 * t * t)
            if term == 0.0:
                continue
            ov[i0] += term
            ratio = exp(-(t * delta + 0.5 * delta * delta))
            x = term
            for i in range(i0 + 1, ng):
                x *= ratio
                if x == 0.0:
                    break
                ov[i] += x
                ratio *= q
            ratio = exp(t * delta - 0.5 * delta * delta)
            x = term
            for i in range(i0 - 1, -1, -1):
                x *= ratio
                if x == 0.0:
                    break
                ov[i] += x
                ratio *= q
        for i in range(ng):
            ov[i] *= scale
        return out
    for i in range(ng):
        x = g[i]
        acc = 0.0
        for k in range(ns):
            u = (x - s[k]) / h
            # exp underflows to exactly 0 beyond this point
            if u * u < 1500.0:
                acc += exp(-0.5 * u * u)
        ov[i] = acc * scale
    return out


def lidar_scan(double px, double py, double theta, centers, int n_bins, double max_range):
    cdef const double[:, ::1] c = np.ascontiguousarray(
        np.asarray(centers, dtype=np.float64).reshape(-1, 2))
    out = np.zeros(n_bins)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, k
    cdef double dx, dy, d, bearing, val
    cdef double width = 2.0 * M_PI / n_bins
    for i in range(c.shape[0]):
        dx = c[i, 0] - px
        dy = c[i, 1] - py
        d = sqrt(dx * dx + dy * dy)
        if d >= max_range:
            continue
        bearing = atan2(dy, dx) - theta
        k = <Py_ssize_t> floor(bearing / width + 0.5)
        k = k % n_bins
        if k < 0:
            k += n_bins
        val = 1.0 - d / max_range
        if val > ov[k]:
            ov[k] = val
    return out
