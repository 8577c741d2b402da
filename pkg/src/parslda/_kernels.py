"""Compiled Gibbs sweep kernels.

Uniform variates are drawn by the caller (one per token per sweep) so a
sweep is a pure function of its inputs and the numpy seed stream.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _draw(weights, u):
    total = 0.0
    for t in range(weights.size):
        total += weights[t]
    target = u * total
    acc = 0.0
    for t in range(weights.size):
        acc += weights[t]
        if target < acc:
            return t
    return weights.size - 1


@njit(cache=True, nogil=True)
def train_sweep(words, offsets, z, ndt, ntw, nt, eta, y, alpha, beta, rho, u):
    """One training sweep in document order, token order. Mutates z and counts."""
    T = ntw.shape[0]
    W = ntw.shape[1]
    Talpha = T * alpha
    Wbeta = W * beta
    logw = np.empty(T)
    weights = np.empty(T)
    D = offsets.size - 1
    for d in range(D):
        start = offsets[d]
        Nd = offsets[d + 1] - start
        yd = y[d]
        log_doc_denom = math.log(Nd - 1 + Talpha)
        for i in range(start, start + Nd):
            w = words[i]
            old = z[i]
            ndt[d, old] -= 1
            ntw[old, w] -= 1
            nt[old] -= 1
            s = 0.0
            for t in range(T):
                s += eta[t] * ndt[d, t]
            best = -np.inf
            for t in range(T):
                mu = (s + eta[t]) / Nd
                r = yd - mu
                lw = (
                    -(r * r) / (2.0 * rho)
                    + math.log(ndt[d, t] + alpha)
                    - log_doc_denom
                    + math.log(ntw[t, w] + beta)
                    - math.log(nt[t] + Wbeta)
                )
                logw[t] = lw
                if lw > best:
                    best = lw
            for t in range(T):
                weights[t] = math.exp(logw[t] - best)
            new = _draw(weights, u[i])
            z[i] = new
            ndt[d, new] += 1
            ntw[new, w] += 1
            nt[new] += 1


@njit(cache=True, nogil=True)
def predict_sweep(words, offsets, z, ndt, phi, alpha, u):
    """One prediction sweep: word factor read from a frozen phi, no response term."""
    T = phi.shape[0]
    weights = np.empty(T)
    D = offsets.size - 1
    for d in range(D):
        start = offsets[d]
        Nd = offsets[d + 1] - start
        for i in range(start, start + Nd):
            w = words[i]
            ndt[d, z[i]] -= 1
            for t in range(T):
                weights[t] = (ndt[d, t] + alpha) * phi[t, w]
            new = _draw(weights, u[i])
            z[i] = new
            ndt[d, new] += 1


@njit(cache=True, nogil=True)
def count_tables(words, offsets, z, T, W):
    D = offsets.size - 1
    ndt = np.zeros((D, T), dtype=np.int64)
    ntw = np.zeros((T, W), dtype=np.int64)
    for d in range(D):
        for i in range(offsets[d], offsets[d + 1]):
            ndt[d, z[i]] += 1
            ntw[z[i], words[i]] += 1
    return ndt, ntw
