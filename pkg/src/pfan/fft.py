"""Exact-length discrete Fourier transforms.

Composite lengths are split recursively by their smallest prime factor
(decimation in time). Prime factors up to ``DIRECT_MAX`` are combined with a
small dense DFT; larger primes go through Bluestein's chirp-z algorithm on a
power-of-two grid. No zero padding of the signal itself ever happens, so the
result is the DFT of the true extent.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

DIRECT_MAX = 5


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(p: int, sign: int) -> np.ndarray:
    k = np.arange(p)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / p)


@lru_cache(maxsize=None)
def _twiddles(n: int, p: int, sign: int) -> np.ndarray:
    m = n // p
    return np.exp(sign * 2j * np.pi * np.outer(np.arange(p), np.arange(m)) / n)


@lru_cache(maxsize=None)
def _bluestein_plan(n: int, sign: int):
    m = 1
    while m < 2 * n - 1:
        m *= 2
    k = np.arange(n)
    # k*k mod 2n keeps the chirp argument small and exact for large n
    chirp = np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    return m, chirp, _fft_last(b, -1)


def _bluestein(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    m, chirp, b_hat = _bluestein_plan(n, sign)
    buf = np.zeros(a.shape[:-1] + (m,), dtype=complex)
    buf[..., :n] = a * chirp
    conv = _fft_last(_fft_last(buf, -1) * b_hat, +1) / m
    return conv[..., :n] * chirp


def _fft_last(a: np.ndarray, sign: int) -> np.ndarray:
    n = a.shape[-1]
    if n == 1:
        return a.astype(complex, copy=True)
    p = _smallest_factor(n)
    if p == n:
        if n <= DIRECT_MAX:
            return a @ _dft_matrix(n, sign).T
        return _bluestein(a, sign)
    m = n // p
    # x[r + p*j] -> sub-sequence r, position j
    sub = np.swapaxes(a.reshape(a.shape[:-1] + (m, p)), -1, -2)
    y = _fft_last(sub, sign) * _twiddles(n, p, sign)
    # X[k + m*q] = sum_r W_p^{rq} (W_n^{rk} Y_r[k])
    out = np.einsum("qr,...rk->...qk", _dft_matrix(p, sign), y)
    return out.reshape(a.shape[:-1] + (n,))


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalised forward DFT along one axis."""
    a = np.moveaxis(np.asarray(x), axis, -1)
    return np.moveaxis(_fft_last(a, -1), -1, axis)


def ifft_unnormalized(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Conjugate-kernel transform (the adjoint of :func:`fft`), no 1/n factor."""
    a = np.moveaxis(np.asarray(x), axis, -1)
    return np.moveaxis(_fft_last(a, +1), -1, axis)


def fft2(x: np.ndarray) -> np.ndarray:
    """Forward 2-D DFT over the last two axes."""
    return fft(fft(x, -1), -2)


def adjoint_fft2(x: np.ndarray) -> np.ndarray:
    return ifft_unnormalized(ifft_unnormalized(x, -1), -2)
