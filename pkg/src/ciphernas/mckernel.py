"""Numba kernels for the decryption-failure Monte-Carlo.

A trial simulates the error DAG of one output ciphertext of a linear
layer, with every random quantity drawn from a counter-based splitmix64
stream seeded by (seed, trial index), so parallel and serial runs agree
bit for bit.

All arithmetic is exact: negacyclic products run as NTTs over two or
three fixed ~30-bit primes (Montgomery form, R = 2^32) and are
CRT-reconstructed into int64.  The caller must pick the prime count from
an analytic worst-case bound on the final error (see
noise.layer_worst_bound); reconstruction is exact whenever that bound
stays below 2^60.

A pure-Python big-integer twin of the kernel (identical sampling stream,
schoolbook arithmetic) lives at the bottom of the module; it is the
fallback past the int64 capacity and the cross-check in the test suite.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

# NTT-friendly primes with primitive root 3 and 2-adicity >= 21
# (negacyclic transforms up to n = 2^20).
PRIMES = (998244353, 1004535809, 469762049)
_ROOT = 3
_R_BITS = 32
_R_MASK = (1 << 32) - 1

# Signed capacity of exact reconstruction per prime count.
CAP_2 = (PRIMES[0] * PRIMES[1]) // 2          # ~2^58.8
CAP_3 = 1 << 60                               # int64 reconstruction guard

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


# ---------------------------------------------------------------------------
# splitmix64 stream and bounded samplers
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _sm_mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _sm_next(state):
    state = state + _GOLDEN
    return state, _sm_mix(state)


@njit(cache=True, inline="always")
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True)
def _trial_state(seed, trial):
    # Distinct stream per (seed, trial); double mixing decorrelates
    # adjacent trial indices.
    s = np.uint64(seed) ^ (_GOLDEN * np.uint64(trial + 1))
    return _sm_mix(_sm_mix(s))


@njit(cache=True)
def _sample_cbd(state, k, out):
    """Centered binomial with parameter k (k <= 31): popcount of k bits
    minus popcount of k other bits from one 64-bit draw."""
    mask = np.uint64((1 << k) - 1)
    for i in range(out.shape[0]):
        state, u = _sm_next(state)
        a = _popcount(u & mask)
        b = _popcount((u >> np.uint64(32)) & mask)
        out[i] = np.int64(a) - np.int64(b)
    return state


@njit(cache=True)
def _sample_weight(state, bits, out):
    """Uniform signed `bits`-bit integers in [-2^(bits-1), 2^(bits-1))."""
    mask = np.uint64((1 << bits) - 1)
    half = np.int64(1 << (bits - 1))
    for i in range(out.shape[0]):
        state, u = _sm_next(state)
        out[i] = np.int64((u >> np.uint64(8)) & mask) - half
    return state


@njit(cache=True)
def _sample_ks(state, scale, out):
    """Key-switch noise: Irwin-Hall sum of 12 uniform 16-bit lanes,
    centered (std ~2^16), scaled to std sigma_ks = scale / 2^16.
    Bounded by construction: |value| <= (6*65535*scale + 2^31) >> 32."""
    for i in range(out.shape[0]):
        state, u0 = _sm_next(state)
        state, u1 = _sm_next(state)
        state, u2 = _sm_next(state)
        s = np.int64(0)
        m = np.uint64(0xFFFF)
        for sh in (np.uint64(0), np.uint64(16), np.uint64(32), np.uint64(48)):
            s += np.int64((u0 >> sh) & m)
            s += np.int64((u1 >> sh) & m)
            s += np.int64((u2 >> sh) & m)
        s -= np.int64(393210)  # 12 * 65535 / 2
        out[i] = (s * scale + np.int64(1 << 31)) >> np.int64(32)
    return state


def ks_noise_bound(scale: int) -> int:
    """Exact attainable maximum of `_sample_ks` for a given scale."""
    return int((6 * 65535 * int(scale) + (1 << 31)) >> 32)


# ---------------------------------------------------------------------------
# Montgomery arithmetic (R = 2^32) and the negacyclic NTT
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _mont_mul(a, b, p, pprime):
    """a*b*R^{-1} mod p for 0 <= a, b < p < 2^30."""
    t = np.uint64(a) * np.uint64(b)
    m = (t & np.uint64(_R_MASK)) * pprime & np.uint64(_R_MASK)
    u = np.int64((t + m * np.uint64(p)) >> np.uint64(_R_BITS))
    if u >= np.int64(p):
        u -= np.int64(p)
    return u


@njit(cache=True, inline="always")
def _addmod(a, b, p):
    c = a + b
    if c >= p:
        c -= p
    return c


@njit(cache=True, inline="always")
def _submod(a, b, p):
    c = a - b
    if c < 0:
        c += p
    return c


@njit(cache=True)
def _ntt(a, wtab, brev, p, pprime):
    """Iterative radix-2 NTT; `a` and `wtab` in Montgomery form."""
    n = a.shape[0]
    for i in range(n):
        j = brev[i]
        if i < j:
            a[i], a[j] = a[j], a[i]
    length = 1
    widx = 0
    while length < n:
        for start in range(0, n, length << 1):
            for j in range(length):
                w = wtab[widx + j]
                u = a[start + j]
                v = _mont_mul(a[start + length + j], w, p, pprime)
                a[start + j] = _addmod(u, v, p)
                a[start + length + j] = _submod(u, v, p)
        widx += length
        length <<= 1


@njit(cache=True)
def _fwd_neg(x, psi_m, wtab, brev, p, pprime, r2, out):
    """out = NTT(psi^i * x_i), Montgomery form; any signed int64 input."""
    n = x.shape[0]
    for i in range(n):
        v = x[i] % p  # Python semantics: non-negative
        vm = _mont_mul(v, r2, p, pprime)      # to Montgomery
        out[i] = _mont_mul(vm, psi_m[i], p, pprime)
    _ntt(out, wtab, brev, p, pprime)


@njit(cache=True)
def _inv_neg_std(a, ipsin_m, iwtab, brev, p, pprime):
    """Inverse of _fwd_neg; leaves standard-form residues in [0, p).
    ipsin_m folds in n^{-1}; the final multiply also converts out of
    Montgomery form (one Montgomery factor cancels)."""
    _ntt(a, iwtab, brev, p, pprime)
    for i in range(a.shape[0]):
        # a is Montgomery (xR), ipsin_m is Montgomery (yR):
        # mont_mul(xR, y_std_folded) — ipsin_std stores y (standard), so
        # mont_mul(xR, y) = x*y mod p, already standard.
        a[i] = _mont_mul(a[i], ipsin_m[i], p, pprime)


def _make_prime_tables(n: int, p: int) -> dict:
    g = _ROOT
    r2 = (1 << (2 * _R_BITS)) % p
    to_m = lambda x: x * (1 << _R_BITS) % p
    psi_root = pow(g, (p - 1) // (2 * n), p)
    ipsi_root = pow(psi_root, p - 2, p)
    n_inv = pow(n, p - 2, p)
    psi = np.empty(n, dtype=np.int64)
    ipsin = np.empty(n, dtype=np.int64)
    v, iv = 1, n_inv
    for i in range(n):
        psi[i] = to_m(v)
        # Standard form on purpose: the final mont_mul in _inv_neg_std
        # then yields standard-form output.
        ipsin[i] = iv
        v = v * psi_root % p
        iv = iv * ipsi_root % p
    wtab = np.empty(max(n - 1, 1), dtype=np.int64)
    iwtab = np.empty_like(wtab)
    idx = 0
    length = 1
    while length < n:
        w_len = pow(g, (p - 1) // (2 * length), p)
        iw_len = pow(w_len, p - 2, p)
        w, iw = 1, 1
        for j in range(length):
            wtab[idx + j] = to_m(w)
            iwtab[idx + j] = to_m(iw)
            w = w * w_len % p
            iw = iw * iw_len % p
        idx += length
        length <<= 1
    pprime = (-pow(p, -1, 1 << _R_BITS)) % (1 << _R_BITS)
    return {"psi": psi, "ipsin": ipsin, "wtab": wtab, "iwtab": iwtab,
            "pprime": pprime, "r2": r2}


_TABLE_CACHE: dict = {}


def get_tables(n: int) -> dict:
    """Per-dimension NTT tables for all primes, stacked for the kernel."""
    if n in _TABLE_CACHE:
        return _TABLE_CACHE[n]
    if n & (n - 1) or n < 2:
        raise ValueError(f"ring dimension must be a power of two >= 2, got {n}")
    brev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for i in range(n):
        r, x = 0, i
        for _ in range(bits):
            r = (r << 1) | (x & 1)
            x >>= 1
        brev[i] = r
    per = [_make_prime_tables(n, p) for p in PRIMES]
    tables = {
        "n": n,
        "brev": brev,
        "primes": np.array(PRIMES, dtype=np.int64),
        "pprimes": np.array([t["pprime"] for t in per], dtype=np.uint64),
        "r2": np.array([t["r2"] for t in per], dtype=np.int64),
        "psi": np.stack([t["psi"] for t in per]),
        "ipsin": np.stack([t["ipsin"] for t in per]),
        "wtab": np.stack([t["wtab"] for t in per]),
        "iwtab": np.stack([t["iwtab"] for t in per]),
        "inv_p0_mod_p1": pow(PRIMES[0], PRIMES[1] - 2, PRIMES[1]),
        "inv_p0p1_mod_p2": pow(PRIMES[0] * PRIMES[1] % PRIMES[2], PRIMES[2] - 2, PRIMES[2]),
        "p0p1": PRIMES[0] * PRIMES[1],
    }
    _TABLE_CACHE[n] = tables
    return tables


@njit(cache=True)
def _monomial_hats_kernel(rot_amounts, psi, wtab, brev, primes, pprimes, r2, out):
    n = brev.shape[0]
    x = np.zeros(n, dtype=np.int64)
    for r in range(rot_amounts.shape[0]):
        x[:] = 0
        x[rot_amounts[r] % n] = 1
        for pi in range(primes.shape[0]):
            _fwd_neg(x, psi[pi], wtab[pi], brev, primes[pi], pprimes[pi], r2[pi], out[r, pi])


def monomial_hats(n: int, rot_amounts) -> np.ndarray:
    """Forward transforms of X^k for each rotation amount, per prime."""
    t = get_tables(n)
    out = np.empty((max(len(rot_amounts), 1), len(PRIMES), n), dtype=np.int64)
    amounts = np.array(list(rot_amounts) or [0], dtype=np.int64)
    _monomial_hats_kernel(amounts, t["psi"], t["wtab"], t["brev"],
                          t["primes"], t["pprimes"], t["r2"], out)
    return out


@njit(cache=True, inline="always")
def _garner(d0, d1, d2, nprimes, p0, p1, p2, inv01, inv012, p0p1):
    """Centered CRT reconstruction into int64; exact for |v| < 2^60."""
    c1 = ((d1 - d0) % p1) * inv01 % p1
    if c1 > p1 // 2:
        c1 -= p1
    v = d0 + p0 * c1
    if nprimes == 2:
        return v
    r2 = (d2 - v) % p2
    c2 = r2 * inv012 % p2
    if c2 > p2 // 2:
        c2 -= p2
    return v + p0p1 * c2


@njit(cache=True, parallel=True)
def simulate_norms_kernel(nprimes, primes, pprimes, r2, psi, ipsin, wtab,
                          iwtab, brev, rot_hats, term_input, term_rot,
                          rs_rot, rs_noises, n_inputs, cbd_k, lf_bits,
                          ks_scale, inv01, inv012, p0p1, trials, seed, norms):
    n = brev.shape[0]
    n_terms = term_input.shape[0]
    depth = rs_rot.shape[0]
    for t in prange(trials):
        st = _trial_state(seed, t)
        raw = np.empty(n, dtype=np.int64)
        inhat = np.empty((n_inputs, nprimes, n), dtype=np.int64)
        acc = np.zeros((nprimes, n), dtype=np.int64)
        noise_hat = np.empty((nprimes, n), dtype=np.int64)
        w_hat = np.empty((nprimes, n), dtype=np.int64)
        # Fresh error of each input ciphertext.
        for j in range(n_inputs):
            st = _sample_cbd(st, cbd_k, raw)
            for pi in range(nprimes):
                _fwd_neg(raw, psi[pi], wtab[pi], brev, primes[pi],
                         pprimes[pi], r2[pi], inhat[j, pi])
        # Multiplication terms: weight (*) (rotated input + ks noise).
        for m in range(n_terms):
            j = term_input[m]
            r = term_rot[m]
            if r >= 0:
                st = _sample_ks(st, ks_scale, raw)
                for pi in range(nprimes):
                    _fwd_neg(raw, psi[pi], wtab[pi], brev, primes[pi],
                             pprimes[pi], r2[pi], noise_hat[pi])
            st = _sample_weight(st, lf_bits, raw)
            for pi in range(nprimes):
                _fwd_neg(raw, psi[pi], wtab[pi], brev, primes[pi],
                         pprimes[pi], r2[pi], w_hat[pi])
            for pi in range(nprimes):
                p, pp = primes[pi], pprimes[pi]
                if r >= 0:
                    for i in range(n):
                        a = _addmod(_mont_mul(rot_hats[r, pi, i], inhat[j, pi, i], p, pp),
                                    noise_hat[pi, i], p)
                        acc[pi, i] = _addmod(acc[pi, i], _mont_mul(w_hat[pi, i], a, p, pp), p)
                else:
                    for i in range(n):
                        acc[pi, i] = _addmod(acc[pi, i],
                                             _mont_mul(w_hat[pi, i], inhat[j, pi, i], p, pp), p)
        # Rotate-and-sum: acc <- acc + rot(acc) + ks noise, one
        # independent noise per packed input block per stage.
        for d in range(depth):
            r = rs_rot[d]
            for pi in range(nprimes):
                p, pp = primes[pi], pprimes[pi]
                for i in range(n):
                    v = acc[pi, i]
                    acc[pi, i] = _addmod(v, _mont_mul(rot_hats[r, pi, i], v, p, pp), p)
            for _rep in range(rs_noises):
                st = _sample_ks(st, ks_scale, raw)
                for pi in range(nprimes):
                    _fwd_neg(raw, psi[pi], wtab[pi], brev, primes[pi],
                             pprimes[pi], r2[pi], noise_hat[pi])
                    p = primes[pi]
                    for i in range(n):
                        acc[pi, i] = _addmod(acc[pi, i], noise_hat[pi, i], p)
        # Share re-randomization: one extra homomorphic addition of a
        # fresh encryption.
        st = _sample_cbd(st, cbd_k, raw)
        for pi in range(nprimes):
            _fwd_neg(raw, psi[pi], wtab[pi], brev, primes[pi],
                     pprimes[pi], r2[pi], noise_hat[pi])
            p = primes[pi]
            for i in range(n):
                acc[pi, i] = _addmod(acc[pi, i], noise_hat[pi, i], p)
        # Back to coefficients, reconstruct, take the infinity norm.
        for pi in range(nprimes):
            _inv_neg_std(acc[pi], ipsin[pi], iwtab[pi], brev, primes[pi], pprimes[pi])
        best = np.int64(0)
        for i in range(n):
            d2 = acc[2, i] if nprimes > 2 else np.int64(0)
            v = _garner(acc[0, i], acc[1, i], d2, nprimes,
                        primes[0], primes[1], primes[2], inv01, inv012, p0p1)
            if v < 0:
                v = -v
            if v > best:
                best = v
        norms[t] = best


def simulate_norms(n: int, plan, cbd_k: int, lf_bits: int, ks_scale: int,
                   trials: int, seed: int, nprimes: int) -> np.ndarray:
    """Run `trials` independent DAG simulations; returns per-trial
    infinity norms of the final error, exact as int64."""
    t = get_tables(n)
    rot_hats = monomial_hats(n, plan.rot_amounts)
    norms = np.empty(trials, dtype=np.int64)
    simulate_norms_kernel(nprimes, t["primes"], t["pprimes"], t["r2"],
                          t["psi"], t["ipsin"], t["wtab"], t["iwtab"],
                          t["brev"], rot_hats,
                          plan.term_input, plan.term_rot, plan.rs_rot,
                          plan.rs_noise_count, plan.n_inputs,
                          cbd_k, lf_bits, np.int64(ks_scale),
                          t["inv_p0_mod_p1"], t["inv_p0p1_mod_p2"], t["p0p1"],
                          trials, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), norms)
    return norms


# ---------------------------------------------------------------------------
# Pure-Python twin of the kernel: identical sampling stream and DAG,
# big-int schoolbook arithmetic in place of the CRT-NTT.
# ---------------------------------------------------------------------------

_M64 = (1 << 64) - 1


def _py_mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _M64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _M64
    return z ^ (z >> 31)


class _PyStream:
    def __init__(self, seed: int, trial: int):
        s = (seed & _M64) ^ (0x9E3779B97F4A7C15 * (trial + 1) & _M64)
        self.state = _py_mix(_py_mix(s))

    def next64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _M64
        return _py_mix(self.state)

    def cbd(self, k: int, n: int) -> list:
        mask = (1 << k) - 1
        out = []
        for _ in range(n):
            u = self.next64()
            out.append(bin(u & mask).count("1") - bin((u >> 32) & mask).count("1"))
        return out

    def weight(self, bits: int, n: int) -> list:
        mask = (1 << bits) - 1
        half = 1 << (bits - 1)
        return [((self.next64() >> 8) & mask) - half for _ in range(n)]

    def ks(self, scale: int, n: int) -> list:
        out = []
        for _ in range(n):
            s = 0
            for _ in range(3):
                u = self.next64()
                for sh in (0, 16, 32, 48):
                    s += (u >> sh) & 0xFFFF
            s -= 393210
            out.append((s * scale + (1 << 31)) >> 32)
        return out


def simulate_norms_python(n: int, plan, cbd_k: int, lf_bits: int,
                          ks_scale: int, trials: int, seed: int) -> list:
    from .ring import negacyclic_mul_big, negacyclic_shift

    rot_amounts = plan.rot_amounts
    norms = []
    for t in range(trials):
        st = _PyStream(seed, t)
        inputs = [st.cbd(cbd_k, n) for _ in range(plan.n_inputs)]
        acc = [0] * n
        for m in range(len(plan.term_input)):
            j = plan.term_input[m]
            r = plan.term_rot[m]
            if r >= 0:
                eta = st.ks(ks_scale, n)
                a = [x + y for x, y in zip(negacyclic_shift(inputs[j], rot_amounts[r]), eta)]
            else:
                a = inputs[j]
            w = st.weight(lf_bits, n)
            term = negacyclic_mul_big(w, a)
            acc = [x + y for x, y in zip(acc, term)]
        for d in range(len(plan.rs_rot)):
            rot = negacyclic_shift(acc, rot_amounts[plan.rs_rot[d]])
            acc = [x + y for x, y in zip(acc, rot)]
            for _rep in range(plan.rs_noise_count):
                eta = st.ks(ks_scale, n)
                acc = [x + y for x, y in zip(acc, eta)]
        blind = st.cbd(cbd_k, n)
        acc = [x + y for x, y in zip(acc, blind)]
        norms.append(max(abs(v) for v in acc))
    return norms
