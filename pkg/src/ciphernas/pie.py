"""Parameter instantiation engine: pick (n, p, q) per linear layer.

Flow per candidate ring dimension (ascending, so the smallest feasible
n wins): size the plaintext modulus from the quantizers and filter
geometry, take the analytic worst-case ciphertext-modulus estimate
(loose by construction), clamp it to the security table, then tighten q
downward one bit at a time while the Monte-Carlo decryption-failure
upper bound stays below delta.  The first failing bit stops the
descent; if even the security cap fails the failure gate, the next ring
dimension is tried.

The per-trial error norms are independent of q (errors are tracked as
unreduced integers; q only moves the failure threshold), so one
simulation per (layer, n) serves the entire descent, bit-identically to
re-simulating at every q.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .model import CryptoParams, LinearLayer
from .noise import (DEFAULT_MODEL, NoiseModel, clopper_pearson_upper,
                    failures_at, layer_worst_bound, simulate_layer_norms)
from .packing import PackingInfeasible, packing_min_n
from .primes import gen_prime_congruent
from .security import SecurityTable, default_table, security_gate

DEFAULT_N_CANDIDATES = (1024, 2048, 4096, 8192, 16384)


class InfeasibleError(RuntimeError):
    """No candidate ring dimension satisfies both gates."""

    def __init__(self, message: str, binding: str):
        self.binding = binding
        super().__init__(message)


@dataclass(frozen=True)
class PieConfig:
    delta: float = 1e-3
    security_level: int = 128
    mc_trials: int = 10_000
    n_candidates: tuple = DEFAULT_N_CANDIDATES
    q_bit_step: int = 1
    congruence_mode: str = "2n"   # "2n" enables full SIMD batching; "n" is the literal rule
    mc_seed: int = 0xC0FFEE

    def check(self) -> list:
        out = []
        if not 1e-3 <= self.delta <= 1e-2:
            out.append(f"delta={self.delta} outside [1e-3, 1e-2]")
        if self.security_level not in (128, 192, 256):
            out.append(f"security_level={self.security_level} not in (128, 192, 256)")
        if self.mc_trials < 1:
            out.append("mc_trials must be >= 1")
        if self.q_bit_step != 1:
            out.append("q_bit_step must be 1 (bit-by-bit descent)")
        if self.congruence_mode not in ("2n", "n"):
            out.append(f"congruence_mode={self.congruence_mode!r} not in ('2n', 'n')")
        return out

    def congruence_base(self, n: int) -> int:
        return 2 * n if self.congruence_mode == "2n" else n


def plaintext_bitwidth(l_i: int, l_f: int, f_h: int, f_w: int) -> int:
    """Bits the plaintext modulus must hold: input quantizer + filter
    quantizer + carry room for the f_h*f_w-term inner product."""
    if min(l_i, l_f, f_h, f_w) < 1:
        raise ValueError("all arguments must be >= 1")
    # (x-1).bit_length() == ceil(log2 x), exactly, for x >= 1.
    return l_i + l_f + (f_h * f_w - 1).bit_length()


def initial_q_estimate(layer: LinearLayer, n: int, p: int,
                       model: NoiseModel = DEFAULT_MODEL) -> int:
    """Loose analytic bits(q): enough for the worst-case error growth of
    the layer's op DAG.

    bits(q) = bits(p) + bits(2 * worst_bound) + 1, which guarantees
    Delta = floor(q/p) > 2 * worst_bound, hence zero decryption failures
    (every sampler in the simulation is bounded by worst_bound).  Always
    at least bits(p) + 1: the Delta/2 margin itself.
    """
    bound = layer_worst_bound(layer, n, model)
    return p.bit_length() + (2 * bound).bit_length() + 1


@dataclass(frozen=True)
class PieResult:
    params: CryptoParams
    n_trials: int
    failures: int
    ucb95: float


def max_failures_passing(trials: int, delta: float) -> int:
    """Largest failure count whose Clopper-Pearson 95% upper bound still
    clears delta; -1 when even zero failures cannot."""
    f = 0
    while f <= trials and clopper_pearson_upper(f, trials) < delta:
        f += 1
    return f - 1


def _largest_prime_within(bits_cap: int, base: int) -> Optional[int]:
    """Largest-width prime === 1 (mod base) whose bit length fits the cap."""
    bits = bits_cap
    while bits >= (base + 1).bit_length():
        q = gen_prime_congruent(bits, base)
        if q.bit_length() <= bits_cap:
            return q
        bits -= 1
    return None


_PILOT_TRIALS = 32


def pie_optimize(layer: LinearLayer, cfg: PieConfig = PieConfig(),
                 model: NoiseModel = DEFAULT_MODEL,
                 table: Optional[SecurityTable] = None) -> CryptoParams:
    return pie_optimize_full(layer, cfg, model, table).params


def pie_optimize_full(layer: LinearLayer, cfg: PieConfig = PieConfig(),
                      model: NoiseModel = DEFAULT_MODEL,
                      table: Optional[SecurityTable] = None) -> PieResult:
    if table is None:
        table = default_table(cfg.security_level)
    candidates = sorted(n for n in cfg.n_candidates if n in table.rows)
    if not candidates:
        raise InfeasibleError("no ring-dimension candidates in the security table",
                              binding="security-table coverage")
    try:
        n_min = packing_min_n(layer, candidates)
    except PackingInfeasible as e:
        raise InfeasibleError(str(e), binding="packing") from None

    bits_p_raw = plaintext_bitwidth(layer.l_i, layer.l_f, layer.f_h, layer.f_w)
    f_max = max_failures_passing(cfg.mc_trials, cfg.delta)
    last_block = "packing"
    for n in candidates:
        if n < n_min:
            continue
        base = cfg.congruence_base(n)
        # p must itself exceed the congruence base; tiny quantizer
        # settings are promoted to the smallest admissible width.
        bits_p = max(bits_p_raw, (base + 1).bit_length())
        p = gen_prime_congruent(bits_p, base)
        cap = table.max_log2_q(n)
        floor_bits = p.bit_length() + 1
        if floor_bits > cap or f_max < 0:
            last_block = f"security (n={n} cap {cap} < bits(p)+1 = {floor_bits})"
            continue
        q_cap = _largest_prime_within(cap, base)
        if q_cap is None or q_cap <= p:
            last_block = f"security (no admissible q within cap {cap} at n={n})"
            continue
        # Certified pre-check: trial failures only grow with trial count,
        # and the failure count is minimized at the largest admissible q.
        # If a prefix of the trial stream already fails the gate there,
        # no q at this n can pass.
        if cfg.mc_trials > _PILOT_TRIALS:
            pilot = simulate_layer_norms(layer, n, _PILOT_TRIALS, cfg.mc_seed, model)
            if failures_at(pilot, q_cap // p) > f_max:
                last_block = (f"decryption-failure bound delta={cfg.delta} unreachable "
                              f"within security cap {cap} at n={n}")
                continue
        start_bits = min(initial_q_estimate(layer, n, p, model), cap)
        norms = simulate_layer_norms(layer, n, cfg.mc_trials, cfg.mc_seed, model)

        best = None
        bits = start_bits
        seen = set()
        while bits >= floor_bits:
            q = gen_prime_congruent(bits, base)
            if q.bit_length() > cap or q in seen:
                # Prime search promoted past this width; try the next
                # width down.
                bits -= 1
                continue
            seen.add(q)
            f = failures_at(norms, q // p)
            if clopper_pearson_upper(f, cfg.mc_trials) < cfg.delta:
                best = (q, f)
                bits = min(bits, q.bit_length()) - cfg.q_bit_step
            else:
                break
        if best is not None:
            q, f = best
            params = CryptoParams(n=n, p=p, q=q, sigma=model.sigma,
                                  security_bits=table.security_bits)
            return PieResult(params=params, n_trials=cfg.mc_trials, failures=f,
                             ucb95=clopper_pearson_upper(f, cfg.mc_trials))
        last_block = (f"decryption-failure bound delta={cfg.delta} unreachable "
                      f"within security cap {cap} at n={n}")
    raise InfeasibleError(
        f"no (n, q) satisfies both gates for layer {layer.kind} "
        f"n_i={layer.n_i} l_i={layer.l_i} l_f={layer.l_f}; last binding constraint: {last_block}",
        binding=last_block)
