"""Prime generation under congruence constraints.

Batching-friendly RLWE moduli must satisfy p === q === 1 (mod base),
with base = 2n by default.  Primality is delegated to sympy (BPSW);
the test suite cross-checks against an independent Miller-Rabin oracle.
"""
from __future__ import annotations

import sympy

# Candidates scanned per bitwidth before declaring a diagnostic failure;
# Dirichlet density makes exhaustion implausible for any real base.
SEARCH_CAP = 1 << 20


class PrimeSearchError(RuntimeError):
    pass


def gen_prime_congruent(bits: int, base: int) -> int:
    """Smallest prime rho === 1 (mod base) with ceil(log2 rho) = bits.

    If no such prime exists at that bitwidth the search advances to
    bits+1 (a recorded promotion: callers read the actual bit length off
    the result).
    """
    if base < 1:
        raise ValueError("base must be >= 1")
    if bits < (base + 1).bit_length():
        raise ValueError(f"bits={bits} cannot exceed base+1={base + 1}")
    scanned = 0
    while True:
        # ceil(log2 rho) = bits  <=>  2^(bits-1) < rho <= 2^bits.
        lo, hi = (1 << (bits - 1)) + 1, 1 << bits
        k = (lo - 1 - 1) // base + 1  # smallest k with k*base + 1 >= lo
        cand = k * base + 1
        while cand <= hi:
            scanned += 1
            if scanned > SEARCH_CAP:
                raise PrimeSearchError(
                    f"no prime === 1 (mod {base}) found within {SEARCH_CAP} candidates")
            if sympy.isprime(cand):
                return cand
            cand += base
        bits += 1  # promotion: bitwidth had no qualifying prime
