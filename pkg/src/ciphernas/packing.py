"""Ciphertext packing model: primitive-op counts for linear layers.

The matvec follows the diagonal-aligned rotate-multiply-accumulate
algorithm: one Hadamard product per true output row (padding applies
only to the rotate-and-sum depth), (n_o - 1) input rotations, then
log2(min(n, n_i')/n_o') rotate-and-sum rounds.

The convolution model packs cn = floor(n/n_i) channels per ciphertext,
shares input rotations across output channels, and needs ceil(log2 cn)
rotate-and-sum rounds per output ciphertext to merge channel partials.
Closed forms are cross-checked against a step-by-step plan walker in the
test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LinearLayer
from .ring import next_pow2


class PackingInfeasible(ValueError):
    """Layer cannot be packed at this ring dimension; the parameter
    engine should raise n."""


@dataclass(frozen=True)
class OpCounts:
    n_mult: int = 0
    n_rot: int = 0
    n_add: int = 0
    n_ct_in: int = 0
    n_ct_out: int = 0
    n_fresh_enc: int = 0

    def check(self) -> list:
        out = [f"{k} must be >= 0" for k, v in self.__dict__.items() if v < 0]
        if self.n_ct_in < 1:
            out.append("n_ct_in must be >= 1 for a nonempty layer")
        return out

    def scaled(self, k: int) -> "OpCounts":
        return OpCounts(*(v * k for v in
                          (self.n_mult, self.n_rot, self.n_add,
                           self.n_ct_in, self.n_ct_out, self.n_fresh_enc)))


def ceil_log2(x: int) -> int:
    return (x - 1).bit_length() if x > 1 else 0


def fc_min_n(n_i: int, n_max: int = 16384) -> int:
    """Smallest ring dimension packing the input vector into a single
    ciphertext (multi-block packing is used only past n_max)."""
    return min(next_pow2(n_i), n_max)


def fc_rotsum_depth(n: int, n_i: int, n_o: int) -> int:
    """Rotate-and-sum rounds; n_o is padded to a power of two for this
    phase only."""
    n_i_pad = next_pow2(n_i)
    n_o_pad = next_pow2(n_o)
    span = min(n, n_i_pad)
    if span <= n_o_pad:
        return 0
    return ceil_log2(span // n_o_pad)


def fc_op_counts(layer: LinearLayer, n: int) -> OpCounts:
    if not layer.is_fc:
        raise ValueError("fc_op_counts requires an FC layer")
    n_i, n_o = layer.n_i, layer.n_o
    if next_pow2(n_o) > n:
        # Matrix taller than one ciphertext: row-block decomposition
        # into ceil(n_o/n) stacked sub-matvecs.
        rb = -(-n_o // n)
        sizes = [n_o // rb + (1 if i < n_o % rb else 0) for i in range(rb)]
        total = OpCounts()
        for sz in sizes:
            sub = fc_op_counts(LinearLayer("FC", n_i=n_i, n_o=sz, f_w=n_i, f_h=1,
                                           l_i=layer.l_i, l_f=layer.l_f, c_i=1, c_o=1), n)
            total = OpCounts(*(a + b for a, b in zip(
                (total.n_mult, total.n_rot, total.n_add, 0, total.n_ct_out, total.n_fresh_enc),
                (sub.n_mult, sub.n_rot, sub.n_add, 0, sub.n_ct_out, sub.n_fresh_enc))))
        blocks = -(-next_pow2(n_i) // n)
        return OpCounts(total.n_mult, total.n_rot, total.n_add,
                        blocks, total.n_ct_out, total.n_fresh_enc)
    n_i_pad = next_pow2(n_i)
    blocks = -(-n_i_pad // n)
    depth = fc_rotsum_depth(n, n_i, n_o)
    per_block_mult = n_o
    per_block_rot = (n_o - 1) + depth
    per_block_add = (n_o - 1) + depth
    return OpCounts(
        n_mult=blocks * per_block_mult,
        n_rot=blocks * per_block_rot,
        n_add=blocks * per_block_add + (blocks - 1),
        n_ct_in=blocks,
        n_ct_out=1,
        n_fresh_enc=1,
    )


def conv_channels_per_ct(n: int, n_i: int) -> int:
    return max(1, n // n_i)


def conv_op_counts(layer: LinearLayer, n: int) -> OpCounts:
    if layer.is_fc:
        raise ValueError("conv_op_counts requires a Conv layer")
    if layer.n_i > n:
        raise PackingInfeasible(
            f"conv spatial size n_i={layer.n_i} exceeds ring dimension n={n}; raise n")
    cn = conv_channels_per_ct(n, layer.n_i)
    c_in = -(-layer.c_i // cn)
    c_out = -(-layer.c_o // cn)
    taps = layer.f_h * layer.f_w
    n_mult = c_in * c_out * taps
    return OpCounts(
        n_mult=n_mult,
        n_rot=c_in * (taps - 1) + c_out * ceil_log2(cn),
        n_add=n_mult - c_out,
        n_ct_in=c_in,
        n_ct_out=c_out,
        n_fresh_enc=c_out,
    )


def op_counts(layer: LinearLayer, n: int) -> OpCounts:
    return fc_op_counts(layer, n) if layer.is_fc else conv_op_counts(layer, n)


def packing_min_n(layer: LinearLayer, candidates) -> int:
    """Smallest candidate ring dimension that fits the layer's packing."""
    n_max = max(candidates)
    if layer.is_fc:
        need = fc_min_n(layer.n_i, n_max)
    else:
        need = layer.n_i
    for n in sorted(candidates):
        if n >= need:
            return n
    raise PackingInfeasible(
        f"no candidate ring dimension fits layer packing (need >= {need})")


# ---------------------------------------------------------------------------
# Error-DAG plan for the decryption-failure Monte-Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePlan:
    """Accumulation path of one output ciphertext.

    `term_input[m]` selects which fresh input-ciphertext error feeds
    multiplication term m; `term_rot[m]` indexes `rot_amounts` (-1 means
    the un-rotated input, which carries no key-switch noise).  Each
    rotate-and-sum stage doubles the accumulator and adds
    `rs_noise_count` independent key-switch noise samples.
    """

    n: int
    n_inputs: int
    term_input: np.ndarray
    term_rot: np.ndarray
    rot_amounts: tuple
    rs_rot: np.ndarray
    rs_noise_count: int
    key: tuple

    @property
    def n_terms(self) -> int:
        return int(self.term_input.shape[0])

    @property
    def rotsum_depth(self) -> int:
        return int(self.rs_rot.shape[0])


def _build_plan(n, n_inputs, terms, rs_amounts, rs_noise_count, key) -> NoisePlan:
    amounts = []
    index = {}
    term_input = np.empty(len(terms), dtype=np.int32)
    term_rot = np.empty(len(terms), dtype=np.int32)
    for m, (inp, rot) in enumerate(terms):
        term_input[m] = inp
        if rot == 0:
            term_rot[m] = -1
        else:
            if rot not in index:
                index[rot] = len(amounts)
                amounts.append(rot)
            term_rot[m] = index[rot]
    rs_rot = np.empty(len(rs_amounts), dtype=np.int32)
    for d, rot in enumerate(rs_amounts):
        if rot not in index:
            index[rot] = len(amounts)
            amounts.append(rot)
        rs_rot[d] = index[rot]
    return NoisePlan(n=n, n_inputs=n_inputs, term_input=term_input,
                     term_rot=term_rot, rot_amounts=tuple(amounts),
                     rs_rot=rs_rot, rs_noise_count=rs_noise_count, key=key)


def layer_noise_plan(layer: LinearLayer, n: int) -> NoisePlan:
    """The per-output-ciphertext error DAG of one linear-layer
    evaluation: fresh input error, the plan's rotations and Hadamard
    products, rotate-and-sum, and the final share-blinding addition."""
    if layer.is_fc:
        n_i, n_o = layer.n_i, layer.n_o
        if next_pow2(n_o) > n:
            rb = -(-n_o // n)
            n_o = -(-n_o // rb)  # deepest row block
        blocks = max(1, -(-next_pow2(n_i) // n))
        depth = fc_rotsum_depth(n, n_i, n_o)
        terms = [(b, i % n) for b in range(blocks) for i in range(n_o)]
        span = min(n, next_pow2(n_i))
        rs_amounts = [max(1, (span >> d) % n) for d in range(1, depth + 1)]
        key = ("FC", n, n_i, n_o, blocks)
        return _build_plan(n, blocks, terms, rs_amounts, blocks, key)
    cn = conv_channels_per_ct(n, layer.n_i)
    c_in = -(-layer.c_i // cn)
    taps = layer.f_h * layer.f_w
    depth = ceil_log2(cn)
    terms = [(j, tap % n) for j in range(c_in) for tap in range(taps)]
    rs_amounts = [max(1, (n >> d) % n) for d in range(1, depth + 1)]
    key = ("Conv", n, layer.n_i, c_in, taps)
    return _build_plan(n, c_in, terms, rs_amounts, 1, key)
