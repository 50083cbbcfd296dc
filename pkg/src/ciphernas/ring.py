"""Exact negacyclic polynomial arithmetic in Z[X]/(X^n + 1).

Three multiply routines, all exact:

* `negacyclic_mul_i64`   -- int64 fast path via np.convolve; the caller must
  guarantee (via analytic bounds) that no intermediate exceeds 2^62.
* `negacyclic_mul_big`   -- schoolbook on Python ints, any magnitude.
* `negacyclic_mul_mod`   -- product reduced mod q, limb-decomposed so the
  convolutions stay inside int64 regardless of q (q up to 192 bits).
"""
from __future__ import annotations

import numpy as np

LIMB_BITS = 20
_LIMB_MASK = (1 << LIMB_BITS) - 1
# Safe int64 budget for a single limb-pair convolution: n * (2^20)^2 * carry.
_I64_GUARD = 1 << 62


def next_pow2(x: int) -> int:
    if x < 1:
        raise ValueError("next_pow2 requires x >= 1")
    return 1 << (x - 1).bit_length() if x > 1 else 1


def negacyclic_fold(full: np.ndarray, n: int) -> np.ndarray:
    """Fold a length-(2n-1) linear convolution into Z[X]/(X^n+1)."""
    out = full[:n].copy()
    out[: n - 1] -= full[n:]
    return out


def negacyclic_mul_i64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact product for int64 inputs.  Caller guarantees the linear
    convolution of |a| and |b| stays below 2^62 per coefficient."""
    n = len(a)
    full = np.convolve(a.astype(np.int64), b.astype(np.int64))
    return negacyclic_fold(full, n)


def negacyclic_mul_big(a, b) -> list:
    """Schoolbook product on Python ints; exact for any magnitudes."""
    n = len(a)
    out = [0] * n
    for i, ai in enumerate(a):
        ai = int(ai)
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            k = i + j
            term = ai * int(bj)
            if k < n:
                out[k] += term
            else:
                out[k - n] -= term
    return out


def _to_limbs(values, n: int) -> list:
    """Split arbitrary-magnitude signed coefficients into signed 20-bit
    limbs, least significant first, as int64 arrays."""
    vals = [int(v) for v in values]
    limbs = []
    while any(v != 0 for v in vals):
        arr = np.empty(n, dtype=np.int64)
        for i, v in enumerate(vals):
            # Arithmetic split keeps limb magnitudes < 2^20 with sign.
            lo = v & _LIMB_MASK
            if lo >= (1 << (LIMB_BITS - 1)):
                lo -= 1 << LIMB_BITS
            arr[i] = lo
            vals[i] = (v - lo) >> LIMB_BITS
        limbs.append(arr)
    if not limbs:
        limbs.append(np.zeros(n, dtype=np.int64))
    return limbs


def negacyclic_mul_mod(a, b, q: int) -> list:
    """Exact negacyclic product of integer coefficient vectors, reduced to
    [0, q).  Inputs may be lists/arrays of Python ints or int64."""
    n = len(a)
    la = _to_limbs(a, n)
    lb = _to_limbs(b, n)
    # One linear convolution per limb pair; each stays below n * 2^40.
    if n * (1 << (2 * LIMB_BITS)) * max(len(la), len(lb)) >= _I64_GUARD:
        raise ValueError("ring dimension too large for the limb strategy")
    diag = {}
    for i, ai in enumerate(la):
        for j, bj in enumerate(lb):
            full = np.convolve(ai, bj)
            s = i + j
            if s in diag:
                diag[s] += full
            else:
                diag[s] = full
    out = [0] * n
    for s, full in diag.items():
        folded = negacyclic_fold(full, n)
        shift = LIMB_BITS * s
        for k in range(n):
            v = int(folded[k])
            if v:
                out[k] += v << shift
    return [v % q for v in out]


def negacyclic_shift(a: np.ndarray, k: int):
    """Multiply by X^k: coefficients shift up k slots, wrapping with a
    sign flip.  A signed permutation, so the infinity norm is preserved."""
    n = len(a)
    k %= n  # rotation amounts are taken mod n
    if k == 0:
        if isinstance(a, np.ndarray):
            return a.copy()
        return list(a)
    if isinstance(a, np.ndarray):
        out = np.empty_like(a)
        out[k:] = a[: n - k]
        out[:k] = -a[n - k:]
        return out
    return [-int(v) for v in a[n - k:]] + [int(v) for v in a[: n - k]]


def add_mod(a, b, q: int) -> list:
    return [(int(x) + int(y)) % q for x, y in zip(a, b)]


def centered(v: int, q: int) -> int:
    v %= q
    return v - q if v >= (q + 1) // 2 else v
