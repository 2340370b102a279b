"""Compiled per-pair log-probability and gradient tables for the training loop.

These mirror ``NdoModel._reference_log_probs_and_grads`` and
``PovmNqsModel._reference_log_probs_and_grads`` term for term; the tests
hold them to the numpy versions.
"""

from __future__ import annotations

import cmath
import math

import numpy as np
from numba import njit

PROB_FLOOR = 1e-300


@njit(cache=True)
def _log2cosh(z):
    if z.real >= 0:
        return z + cmath.log(1.0 + cmath.exp(-2.0 * z))
    return -z + cmath.log(1.0 + cmath.exp(2.0 * z))


@njit(cache=True)
def ndo_tables(theta, spins, wre, wim, nh, na):
    D, n = spins.shape
    nc = theta.shape[0] // 2
    P = theta.shape[0]
    z = np.empty(nc, dtype=np.complex128)
    for i in range(nc):
        z[i] = theta[2 * i] + 1j * theta[2 * i + 1]
    a = z[:n]
    b = z[n:n + nh]
    c = z[n + nh:n + nh + na]
    W = z[n + nh + na:n + nh + na + nh * n].reshape((nh, n))
    U = z[n + nh + na + nh * n:].reshape((na, n))

    hid = np.empty((D, nh), dtype=np.complex128)
    th = np.empty((D, nh), dtype=np.complex128)
    f = np.empty(D, dtype=np.complex128)
    for e in range(D):
        acc = 0j
        for j in range(n):
            acc += a[j] * spins[e, j]
        for h in range(nh):
            x = b[h]
            for j in range(n):
                x += W[h, j] * spins[e, j]
            hid[e, h] = x
            th[e, h] = cmath.tanh(x)
            acc += _log2cosh(x)
        f[e] = acc

    uh = np.empty((D, na), dtype=np.complex128)
    for e in range(D):
        for k in range(na):
            x = 0j
            for j in range(n):
                x += U[k, j] * spins[e, j]
            uh[e, k] = x

    logr = np.empty((D, D), dtype=np.complex128)
    ta = np.empty((D, D, na), dtype=np.complex128)
    shift = -np.inf
    for e in range(D):
        for ep in range(D):
            acc = f[e] + f[ep].conjugate()
            for k in range(na):
                g = c[k].real + uh[e, k] + uh[ep, k].conjugate()
                acc += _log2cosh(g)
                ta[e, ep, k] = cmath.tanh(g)
            logr[e, ep] = acc
            if acc.real > shift:
                shift = acc.real

    # derivative table scaled by the matrix element: rO[(e, ep), p]
    nf = n + nh
    rO_re = np.empty((D * D, P))
    rO_im = np.empty((D * D, P))
    r_re = np.empty(D * D)
    r_im = np.empty(D * D)
    dF = np.empty(n + nh + nh * n, dtype=np.complex128)
    dFp = np.empty(n + nh + nh * n, dtype=np.complex128)
    for e in range(D):
        for j in range(n):
            dF[j] = spins[e, j]
        for h in range(nh):
            dF[n + h] = th[e, h]
            for j in range(n):
                dF[nf + h * n + j] = th[e, h] * spins[e, j]
        for ep in range(D):
            for j in range(n):
                dFp[j] = spins[ep, j]
            for h in range(nh):
                dFp[n + h] = th[ep, h].conjugate()
                for j in range(n):
                    dFp[nf + h * n + j] = th[ep, h].conjugate() * spins[ep, j]
            r = cmath.exp(logr[e, ep] - shift)
            row = e * D + ep
            r_re[row] = r.real
            r_im[row] = r.imag
            # a and b blocks
            for q in range(nf):
                A = dF[q]
                B = dFp[q]
                x = r * (A + B)
                y = r * (1j * (A - B))
                rO_re[row, 2 * q] = x.real
                rO_im[row, 2 * q] = x.imag
                rO_re[row, 2 * q + 1] = y.real
                rO_im[row, 2 * q + 1] = y.imag
            # ancilla bias: only the real part enters
            for k in range(na):
                x = r * ta[e, ep, k]
                q = nf + k
                rO_re[row, 2 * q] = x.real
                rO_im[row, 2 * q] = x.imag
                rO_re[row, 2 * q + 1] = 0.0
                rO_im[row, 2 * q + 1] = 0.0
            # W block
            for m in range(nh * n):
                A = dF[nf + m]
                B = dFp[nf + m]
                q = nf + na + m
                x = r * (A + B)
                y = r * (1j * (A - B))
                rO_re[row, 2 * q] = x.real
                rO_im[row, 2 * q] = x.imag
                rO_re[row, 2 * q + 1] = y.real
                rO_im[row, 2 * q + 1] = y.imag
            # U block
            for k in range(na):
                t = ta[e, ep, k]
                for j in range(n):
                    A = t * spins[e, j]
                    B = t * spins[ep, j]
                    q = nf + na + nh * n + k * n + j
                    x = r * (A + B)
                    y = r * (1j * (A - B))
                    rO_re[row, 2 * q] = x.real
                    rO_im[row, 2 * q] = x.imag
                    rO_re[row, 2 * q + 1] = y.real
                    rO_im[row, 2 * q + 1] = y.imag

    q_un = wre @ r_re - wim @ r_im
    dq_un = wre @ rO_re - wim @ rO_im
    Z = 0.0
    dZ = np.zeros(P)
    for e in range(D):
        row = e * D + e
        Z += r_re[row]
        for p in range(P):
            dZ[p] += rO_re[row, p]

    n_pairs = q_un.shape[0]
    log_q = np.empty(n_pairs)
    clipped = np.zeros(n_pairs, dtype=np.bool_)
    grad = np.empty((n_pairs, P))
    for i in range(n_pairs):
        q = q_un[i] / Z
        if q < PROB_FLOOR:
            clipped[i] = True
            log_q[i] = math.log(PROB_FLOOR)
            for p in range(P):
                grad[i, p] = 0.0
        else:
            log_q[i] = math.log(q)
            for p in range(P):
                grad[i, p] = dq_un[i, p] / q_un[i] - dZ[p] / Z
    return log_q, grad, clipped


@njit(cache=True)
def povm_tables(theta, digits, offsets, h1w, h2w):
    K, n = digits.shape
    P = theta.shape[0]
    log_q = np.zeros(K)
    grad = np.zeros((K, P))
    x = np.zeros(4 * n)
    a1 = np.empty(h1w)
    a2 = np.empty(h2w)
    z = np.empty(4)
    sm = np.empty(4)
    d1 = np.empty(h1w)
    d2 = np.empty(h2w)
    dz = np.empty(4)
    for s in range(K):
        for k in range(n):
            nin = 4 * k
            for i in range(nin):
                x[i] = 0.0
            for j in range(k):
                x[4 * j + digits[s, j]] = 1.0
            o = offsets[k]
            oW1 = o
            ob1 = oW1 + h1w * nin
            oW2 = ob1 + h1w
            ob2 = oW2 + h2w * h1w
            oW3 = ob2 + h2w
            ob3 = oW3 + 4 * h2w
            for u in range(h1w):
                acc = theta[ob1 + u]
                for i in range(nin):
                    acc += theta[oW1 + u * nin + i] * x[i]
                a1[u] = math.tanh(acc)
            for u in range(h2w):
                acc = theta[ob2 + u]
                for i in range(h1w):
                    acc += theta[oW2 + u * h1w + i] * a1[i]
                a2[u] = math.tanh(acc)
            zmax = -np.inf
            for c in range(4):
                acc = theta[ob3 + c]
                for i in range(h2w):
                    acc += theta[oW3 + c * h2w + i] * a2[i]
                z[c] = acc
                if acc > zmax:
                    zmax = acc
            tot = 0.0
            for c in range(4):
                sm[c] = math.exp(z[c] - zmax)
                tot += sm[c]
            sel = digits[s, k]
            log_q[s] += z[sel] - zmax - math.log(tot)
            for c in range(4):
                sm[c] /= tot
                dz[c] = (1.0 if c == sel else 0.0) - sm[c]
            for i in range(h2w):
                acc = 0.0
                for c in range(4):
                    acc += dz[c] * theta[oW3 + c * h2w + i]
                d2[i] = acc * (1.0 - a2[i] * a2[i])
            for i in range(h1w):
                acc = 0.0
                for u in range(h2w):
                    acc += d2[u] * theta[oW2 + u * h1w + i]
                d1[i] = acc * (1.0 - a1[i] * a1[i])
            for u in range(h1w):
                for i in range(nin):
                    grad[s, oW1 + u * nin + i] = d1[u] * x[i]
                grad[s, ob1 + u] = d1[u]
            for u in range(h2w):
                for i in range(h1w):
                    grad[s, oW2 + u * h1w + i] = d2[u] * a1[i]
                grad[s, ob2 + u] = d2[u]
            for c in range(4):
                for i in range(h2w):
                    grad[s, oW3 + c * h2w + i] = dz[c] * a2[i]
                grad[s, ob3 + c] = dz[c]
    return log_q, grad, np.zeros(K, dtype=np.bool_)


@njit(cache=True)
def batch_histogram(pairs, batch, n_pairs):
    w = np.zeros(n_pairs)
    inv = 1.0 / batch.shape[0]
    for i in range(batch.shape[0]):
        w[pairs[batch[i]]] += inv
    return w


@njit(cache=True)
def cv_adam_step(theta, m, v, step, grads, w, anchor_grads, anchor_full, use_cv,
                 lr, beta1, beta2, eps):
    """Assemble the (optionally control-variate) batch gradient and apply Adam in place.

    ``grads`` holds per-pair gradients of log q, so the loss gradient carries a minus sign.
    Returns False without touching the state when the gradient is not finite.
    """
    n_pairs, P = grads.shape
    g = np.zeros(P)
    for i in range(n_pairs):
        wi = w[i]
        if wi != 0.0:
            for p in range(P):
                g[p] -= wi * grads[i, p]
            if use_cv:
                for p in range(P):
                    g[p] += wi * anchor_grads[i, p]
    if use_cv:
        for p in range(P):
            g[p] += anchor_full[p]
    for p in range(P):
        if not math.isfinite(g[p]):
            return False
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p in range(P):
        m[p] = beta1 * m[p] + (1.0 - beta1) * g[p]
        v[p] = beta2 * v[p] + (1.0 - beta2) * g[p] * g[p]
        theta[p] -= lr * (m[p] / c1) / (math.sqrt(v[p] / c2) + eps)
    return True
