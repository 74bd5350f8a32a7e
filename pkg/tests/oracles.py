"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def matmul_loops(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return np.array(out)


def jacobi_eigenvalues(sym, tol=1e-14, max_sweeps=200):
    """Classic cyclic two-sided Jacobi on a symmetric matrix; eigenvalues descending."""
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def naive_forward(model, x):
    """Straight-line forward using materialized effective weights and explicit loops over samples."""
    cols = []
    for j in range(x.shape[1]):
        a = x[:, j]
        for layer in model.layers:
            w = layer.w if layer.adapter is None else layer.w + layer.adapter.delta_w()
            z = w @ a + layer.bias
            a = np.maximum(z, 0) if layer.activation == "relu" else z
        cols.append(a)
    return np.stack(cols, axis=1)


def central_fd(f, p, step=1e-6):
    """Central finite-difference gradient of scalar f() w.r.t. array p (modified in place)."""
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + step
        hi = f()
        p[idx] = old - step
        lo = f()
        p[idx] = old
        g[idx] = (hi - lo) / (2 * step)
    return g


def rel_err(analytic, numeric):
    return float(np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-8))
