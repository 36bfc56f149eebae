"""Numba kernels for the dense cluster master-equation integrator.

The density matrix is split as rho = R + i*S with R symmetric and S
antisymmetric (both real), which the Runge-Kutta stages preserve exactly.
The Hamiltonian is split as H = A + i*B with A real symmetric and B real
antisymmetric; B is only present when single-site sigma^y terms carry
nonzero coefficients.

State buffers pack both halves side by side: y[:, :dim] = R and
y[:, dim:] = S, so one matmul pass produces A@R and A@S together.

The sparse pattern of A is regular: every row holds the same number of
slots (diagonal, one single-flip column per site, one double-flip column
per bond), stored as (dim, nnz) index/data arrays.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def mm_pattern(indices: np.ndarray, data: np.ndarray, x: np.ndarray, out: np.ndarray) -> None:
    """out = M @ x for M given by regular per-row (indices, data) slots."""
    dim, nnz = indices.shape
    m = x.shape[1]
    for a in range(dim):
        for q in range(m):
            out[a, q] = 0.0
        for p in range(nnz):
            v = data[a, p]
            if v != 0.0:
                c = indices[a, p]
                for q in range(m):
                    out[a, q] += v * x[c, q]


@numba.njit(cache=True, fastmath=True)
def rk_stage(
    h: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    bits: np.ndarray,
    gamma: float,
    y0: np.ndarray,
    acc: np.ndarray,
    wk: float,
    reset: float,
    ca: float,
    cb: float,
    ynext: np.ndarray,
) -> None:
    """One Runge-Kutta stage without sigma^y Hamiltonian terms.

    h = [A@R | A@S] of the stage input y.  Computes the Lindblad derivative
    k elementwise, accumulates acc = reset*acc + wk*k, and writes
    ynext = y0 + ca*k + cb*acc (ca for inner stages, cb=dt on the last).
    """
    dim = y.shape[0]
    nl = bits.shape[0]
    for a in range(dim):
        wa = w[a]
        for b in range(dim):
            ww = wa + w[b]
            kr = h[a, dim + b] + h[b, dim + a] - ww * y[a, b]
            ks = h[b, a] - h[a, b] - ww * y[a, dim + b]
            for j in range(nl):
                bj = bits[j]
                if (a & bj) != 0 and (b & bj) != 0:
                    kr += gamma * y[a ^ bj, b ^ bj]
                    ks += gamma * y[a ^ bj, dim + (b ^ bj)]
            ar = reset * acc[a, b] + wk * kr
            as_ = reset * acc[a, dim + b] + wk * ks
            acc[a, b] = ar
            acc[a, dim + b] = as_
            ynext[a, b] = y0[a, b] + ca * kr + cb * ar
            ynext[a, dim + b] = y0[a, dim + b] + ca * ks + cb * as_


@numba.njit(cache=True, fastmath=True)
def rk_stage_b(
    h: np.ndarray,
    hb: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    bits: np.ndarray,
    gamma: float,
    y0: np.ndarray,
    acc: np.ndarray,
    wk: float,
    reset: float,
    ca: float,
    cb: float,
    ynext: np.ndarray,
) -> None:
    """Runge-Kutta stage including the antisymmetric part: hb = [B@R | B@S]."""
    dim = y.shape[0]
    nl = bits.shape[0]
    for a in range(dim):
        wa = w[a]
        for b in range(dim):
            ww = wa + w[b]
            kr = h[a, dim + b] + h[b, dim + a] + hb[a, b] + hb[b, a] - ww * y[a, b]
            ks = (
                h[b, a] - h[a, b]
                + hb[a, dim + b] - hb[b, dim + a]
                - ww * y[a, dim + b]
            )
            for j in range(nl):
                bj = bits[j]
                if (a & bj) != 0 and (b & bj) != 0:
                    kr += gamma * y[a ^ bj, b ^ bj]
                    ks += gamma * y[a ^ bj, dim + (b ^ bj)]
            ar = reset * acc[a, b] + wk * kr
            as_ = reset * acc[a, dim + b] + wk * ks
            acc[a, b] = ar
            acc[a, dim + b] = as_
            ynext[a, b] = y0[a, b] + ca * kr + cb * ar
            ynext[a, dim + b] = y0[a, dim + b] + ca * ks + cb * as_
