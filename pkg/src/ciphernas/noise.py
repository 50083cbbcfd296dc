"""Error sampling, propagation, a minimal BFV-style cryptosystem, and
the decryption-failure Monte-Carlo.

This is a noise physics simulator, not a cryptographic library: no
hardened randomness, no constant-time arithmetic, no key-switching keys.
Rotations act on the error as a signed coefficient permutation (norm
preserving) plus an additive key-switch noise term.

Fresh errors are centered binomial with parameter k = round(2*sigma^2),
approximating a discrete Gaussian of standard deviation sigma (default
3.2); |coefficient| <= k always holds.  Key-switch noise models a
4-digit decomposition, each digit contributing sigma*sqrt(n)-scale
noise: samples are Irwin-Hall(12) approximations of a Gaussian with
std sigma*sqrt(digits*n), bounded by construction at ~6 standard
deviations (the exact attainable maximum is the recorded bound).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import beta as _beta_dist

from . import mckernel
from .model import CryptoParams, LinearLayer
from .packing import NoisePlan, layer_noise_plan
from .ring import (add_mod, negacyclic_mul_big, negacyclic_mul_i64,
                   negacyclic_mul_mod, negacyclic_shift)

_I64_SAFE = 1 << 62


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 3.2
    secret_dist: str = "ternary"
    ks_digits: int = 4
    ks_enabled: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.secret_dist != "ternary":
            raise ValueError("only ternary secrets are modeled")

    @property
    def cbd_k(self) -> int:
        return int(round(2 * self.sigma * self.sigma))

    @property
    def sigma_eff(self) -> float:
        """Std actually realized by the centered binomial."""
        return math.sqrt(self.cbd_k / 2.0)

    def ks_sigma(self, n: int) -> float:
        if not self.ks_enabled:
            return 0.0
        return self.sigma * math.sqrt(self.ks_digits * n)

    def ks_scale(self, n: int) -> int:
        return int(round(self.ks_sigma(n) * 65536))

    def ks_bound(self, n: int) -> int:
        """Exact attainable maximum of one key-switch noise sample."""
        return mckernel.ks_noise_bound(self.ks_scale(n))

    def cache_key(self) -> tuple:
        return (self.sigma, self.ks_digits, self.ks_enabled)


DEFAULT_MODEL = NoiseModel()


@dataclass(frozen=True)
class ErrorState:
    """Unreduced signed error vector with a running analytic bound.

    `bound_abs` is a true worst-case infinity-norm bound (|e_i| <=
    bound_abs at all times); `bound_avg` is the recorded average-case
    companion (sqrt(n)-style growth), kept for diagnostics only.
    """

    e: np.ndarray
    bound_abs: int
    bound_avg: float

    @property
    def n(self) -> int:
        return len(self.e)

    def norm_inf(self) -> int:
        return max(abs(int(v)) for v in self.e)


def _as_object(e: np.ndarray) -> np.ndarray:
    return np.array([int(v) for v in e], dtype=object)


def sample_fresh_error(n: int, model: NoiseModel = DEFAULT_MODEL,
                       rng_seed: int = 0) -> ErrorState:
    """Fresh encryption error: i.i.d. centered binomial."""
    if n < 1 or n & (n - 1):
        raise ValueError("n must be a power of two")
    k = model.cbd_k
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
    if k == 0:
        e = np.zeros(n, dtype=np.int64)
    else:
        e = (rng.binomial(k, 0.5, size=n) - rng.binomial(k, 0.5, size=n)).astype(np.int64)
    return ErrorState(e=e, bound_abs=k, bound_avg=model.sigma_eff)


def sample_ks_noise(n: int, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Key-switch noise via the same integer Irwin-Hall construction the
    Monte-Carlo kernel uses (12 uniform 16-bit lanes, scaled)."""
    scale = model.ks_scale(n)
    if scale == 0:
        return np.zeros(n, dtype=np.int64)
    s = rng.integers(0, 65536, size=(12, n), dtype=np.int64).sum(axis=0) - 393210
    return (s * scale + (1 << 31)) >> 32


def prop_add(a: ErrorState, b: ErrorState) -> ErrorState:
    if a.n != b.n:
        raise ValueError(f"mismatched ring dimensions {a.n} != {b.n}")
    bound = a.bound_abs + b.bound_abs
    if bound < _I64_SAFE and a.e.dtype == np.int64 and b.e.dtype == np.int64:
        e = a.e + b.e
    else:
        e = _as_object(a.e) + _as_object(b.e)
    return ErrorState(e=e, bound_abs=bound, bound_avg=a.bound_avg + b.bound_avg)


def prop_plain_mult(a: ErrorState, w: np.ndarray) -> ErrorState:
    """Error through a plaintext Hadamard product: exact negacyclic
    convolution with the plaintext polynomial w."""
    n = a.n
    if len(w) != n:
        raise ValueError("mismatched ring dimensions")
    w_max = max(abs(int(v)) for v in w)
    rms = math.sqrt(sum(int(v) * int(v) for v in w) / n)
    bound = a.bound_abs * n * w_max
    if (bound < _I64_SAFE and a.e.dtype == np.int64
            and a.bound_abs * w_max * n < _I64_SAFE):
        e = negacyclic_mul_i64(a.e, np.asarray(w, dtype=np.int64))
    else:
        e = np.array(negacyclic_mul_big(list(a.e), list(w)), dtype=object)
    return ErrorState(e=e, bound_abs=bound,
                      bound_avg=a.bound_avg * math.sqrt(n) * rms)


def prop_rot(a: ErrorState, k: int, model: NoiseModel = DEFAULT_MODEL,
             rng: Optional[np.random.Generator] = None) -> ErrorState:
    """Error through a rotation: signed coefficient permutation plus an
    independently sampled key-switch noise term."""
    if not 0 <= k < a.n:
        raise ValueError("rotation amount must satisfy 0 <= k < n")
    e = negacyclic_shift(a.e, k)
    if not model.ks_enabled or model.ks_scale(a.n) == 0:
        return ErrorState(e=e, bound_abs=a.bound_abs, bound_avg=a.bound_avg)
    if rng is None:
        rng = np.random.default_rng(0)
    eta = sample_ks_noise(a.n, model, rng)
    bound = a.bound_abs + model.ks_bound(a.n)
    if bound < _I64_SAFE and e.dtype == np.int64:
        e = e + eta
    else:
        e = _as_object(e) + _as_object(eta)
    return ErrorState(e=e, bound_abs=bound,
                      bound_avg=a.bound_avg + model.ks_sigma(a.n))


# ---------------------------------------------------------------------------
# Minimal BFV-style encrypt / decrypt (symmetric key, no rotation keys)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SecretKey:
    s: tuple
    n: int


@dataclass(frozen=True)
class Ciphertext:
    c0: tuple
    c1: tuple
    n: int
    q: int


def keygen(params: CryptoParams, seed: int = 0) -> SecretKey:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0x5ec))))
    s = rng.integers(-1, 2, size=params.n)
    return SecretKey(s=tuple(int(v) for v in s), n=params.n)


def mini_enc(m, params: CryptoParams, sk: SecretKey, seed: int = 0,
             error=None, a=None) -> Ciphertext:
    """ct = (Delta*m + e - a*s, a) with Delta = floor(q/p).

    `error` / `a` may be supplied explicitly (tests plant errors at the
    decryption threshold).  Decryption recovers m exactly whenever the
    accumulated error infinity norm stays below Delta/2; the residual
    q mod p enters only on already-failing coefficients (folded into the
    threshold margin).
    """
    n, q, p = params.n, params.q, params.p
    m = [int(v) for v in m]
    if len(m) != n:
        raise ValueError("message length must equal n")
    if any(not 0 <= v < p for v in m):
        raise ValueError("message entries must lie in [0, p)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xe2c))))
    if error is None:
        k = DEFAULT_MODEL.cbd_k
        error = (rng.binomial(k, 0.5, size=n) - rng.binomial(k, 0.5, size=n)).astype(np.int64)
    if a is None:
        # Near-uniform mod q from stacked 63-bit draws; the residual bias
        # is irrelevant here (explicit non-goal: no IND-CPA-grade
        # randomness).
        words = (q.bit_length() + 62) // 63 + 1
        draws = rng.integers(0, 1 << 63, size=(words, n), dtype=np.int64)
        a = []
        for j in range(n):
            v = 0
            for i in range(words):
                v = (v << 63) | int(draws[i, j])
            a.append(v % q)
    delta = q // p
    a_s = negacyclic_mul_mod(a, sk.s, q)
    c0 = [(delta * mv + int(ev) - asv) % q for mv, ev, asv in zip(m, error, a_s)]
    return Ciphertext(c0=tuple(c0), c1=tuple(int(x) % q for x in a), n=n, q=q)


def ct_add(x: Ciphertext, y: Ciphertext) -> Ciphertext:
    if x.n != y.n or x.q != y.q:
        raise ValueError("ciphertext parameter mismatch")
    return Ciphertext(c0=tuple(add_mod(x.c0, y.c0, x.q)),
                      c1=tuple(add_mod(x.c1, y.c1, x.q)), n=x.n, q=x.q)


def ct_plain_mult(ct: Ciphertext, w) -> Ciphertext:
    """Multiply by a plaintext polynomial with centered entries."""
    return Ciphertext(c0=tuple(negacyclic_mul_mod(ct.c0, w, ct.q)),
                      c1=tuple(negacyclic_mul_mod(ct.c1, w, ct.q)),
                      n=ct.n, q=ct.q)


def mini_dec(ct: Ciphertext, sk: SecretKey, params: CryptoParams) -> list:
    """Round-to-nearest decode: m_j = floor((v_j + Delta//2)/Delta) mod p."""
    q, p = params.q, params.p
    delta = q // p
    c1s = negacyclic_mul_mod(ct.c1, sk.s, q)
    v = [(int(a) + int(b)) % q for a, b in zip(ct.c0, c1s)]
    return [((x + delta // 2) // delta) % p for x in v]


# ---------------------------------------------------------------------------
# Layer error bounds and the decryption-failure Monte-Carlo
# ---------------------------------------------------------------------------

def weight_max_abs(l_f: int) -> int:
    return 1 << (l_f - 1)


def layer_worst_bound(layer: LinearLayer, n: int,
                      model: NoiseModel = DEFAULT_MODEL) -> int:
    """Exact worst-case infinity-norm bound of the layer's final error.

    Every sampler in the simulation is bounded, so this certifies that
    no trial can exceed the returned value.
    """
    plan = layer_noise_plan(layer, n)
    return plan_worst_bound(plan, n, layer.l_f, model)


def plan_worst_bound(plan: NoisePlan, n: int, l_f: int, model: NoiseModel) -> int:
    w_max = weight_max_abs(l_f)
    ksb = model.ks_bound(n)
    fresh = model.cbd_k
    acc = 0
    for m in range(plan.n_terms):
        in_bound = fresh + (ksb if plan.term_rot[m] >= 0 else 0)
        acc += in_bound * n * w_max
    for _ in range(plan.rotsum_depth):
        acc = 2 * acc + plan.rs_noise_count * ksb
    return acc + fresh


def layer_avg_sigma(layer: LinearLayer, n: int,
                    model: NoiseModel = DEFAULT_MODEL) -> float:
    """Heuristic per-coefficient std of the final error (diagnostics)."""
    plan = layer_noise_plan(layer, n)
    w_var = (1 << (2 * (layer.l_f - 1))) / 3.0
    ks_var = model.ks_sigma(n) ** 2
    fresh_var = model.sigma_eff ** 2
    var = 0.0
    for m in range(plan.n_terms):
        in_var = fresh_var + (ks_var if plan.term_rot[m] >= 0 else 0.0)
        var += n * w_var * in_var
    for _ in range(plan.rotsum_depth):
        var = 4.0 * var + plan.rs_noise_count * ks_var
    return math.sqrt(var + fresh_var)


_NORMS_CACHE: dict = {}
_NORMS_LOCK = threading.Lock()
_NORMS_CACHE_MAX = 1024


def simulate_layer_norms(layer: LinearLayer, n: int, trials: int, seed: int,
                         model: NoiseModel = DEFAULT_MODEL) -> np.ndarray:
    """Per-trial infinity norms of the final layer error, exact.

    The error DAG does not depend on q (errors are tracked unreduced),
    so one simulation serves every candidate ciphertext modulus at the
    same (layer, n, trials, seed).  Results are cached on that key.
    """
    plan = layer_noise_plan(layer, n)
    key = (plan.key, layer.l_f, model.cache_key(), trials, seed)
    with _NORMS_LOCK:
        if key in _NORMS_CACHE:
            return _NORMS_CACHE[key]
    bound = plan_worst_bound(plan, n, layer.l_f, model)
    if bound < mckernel.CAP_2:
        nprimes = 2
    elif bound < mckernel.CAP_3:
        nprimes = 3
    else:
        norms = np.array(
            mckernel.simulate_norms_python(n, plan, model.cbd_k, layer.l_f,
                                           model.ks_scale(n), trials, seed),
            dtype=object)
        with _NORMS_LOCK:
            _NORMS_CACHE[key] = norms
        return norms
    norms = mckernel.simulate_norms(n, plan, model.cbd_k, layer.l_f,
                                    model.ks_scale(n), trials, seed, nprimes)
    with _NORMS_LOCK:
        if len(_NORMS_CACHE) >= _NORMS_CACHE_MAX:
            _NORMS_CACHE.pop(next(iter(_NORMS_CACHE)))
        _NORMS_CACHE[key] = norms
    return norms


def clopper_pearson_upper(failures: int, trials: int, alpha: float = 0.05) -> float:
    """Exact binomial upper confidence bound at level 1 - alpha."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if failures >= trials:
        return 1.0
    return float(_beta_dist.ppf(1.0 - alpha, failures + 1, trials - failures))


def failures_at(norms, delta: int) -> int:
    """Failure count for threshold Delta: a trial fails when the final
    infinity norm e satisfies 2e >= Delta."""
    thr = (delta + 1) // 2  # e >= ceil(Delta/2)  <=>  2e >= Delta
    if isinstance(norms, np.ndarray) and norms.dtype == np.int64:
        if thr > int(np.iinfo(np.int64).max):
            return 0
        return int(np.count_nonzero(norms >= np.int64(thr)))
    return sum(1 for v in norms if int(v) >= thr)


@dataclass(frozen=True)
class McResult:
    failures: int
    trials: int
    ucb95: float


def mc_failure_rate(layer: LinearLayer, params: CryptoParams, trials: int,
                    seed: int, model: NoiseModel = DEFAULT_MODEL) -> McResult:
    """Monte-Carlo decryption-failure estimate for one linear layer.

    Reproducible bit for bit under a fixed seed: trial t draws from a
    stream seeded by (seed, t), independent of scheduling and of q.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    norms = simulate_layer_norms(layer, params.n, trials, seed, model)
    f = failures_at(norms, params.delta)
    return McResult(failures=f, trials=trials,
                    ucb95=clopper_pearson_upper(f, trials))
