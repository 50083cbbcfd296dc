"""Performance characterization: op counts -> seconds and bytes.

Linear layers are priced from the calibration profile row keyed by
(n, words(q)), words(q) = ceil(bits(q)/62): practical lattice libraries
keep two bits of NTT headroom per 64-bit machine word, so crossing the
62-bit boundary costs an extra limb.  Non-linear layers are priced per
element; average pooling is free (absorbed into ciphertext additions on
the linear side).
"""
from __future__ import annotations

import statistics
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .model import (CalibrationProfile, CostReport, CryptoParams, LayerCost,
                    LinearLayer, LinearOpCost, Network, NonLinearCost,
                    NonLinearLayer, validate_network)
from .noise import DEFAULT_MODEL, NoiseModel
from .packing import OpCounts, op_counts
from .pie import InfeasibleError, PieConfig, pie_optimize
from .security import SecurityTable

LIMB_BITS = 62


class ValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class LayerInfeasibleError(RuntimeError):
    def __init__(self, layer_index: int, cause: InfeasibleError):
        self.layer_index = layer_index
        self.cause = cause
        super().__init__(f"layer {layer_index}: {cause}")


def words(bits_q: int, limb_bits: int = LIMB_BITS) -> int:
    return max(1, -(-bits_q // limb_bits))


@dataclass(frozen=True)
class ScoreWeights:
    beta: float = 0.5
    time_scale: float = 1.0
    bw_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.time_scale <= 0 or self.bw_scale <= 0:
            raise ValueError("scales must be > 0")


def score(t: float, b: float, weights: ScoreWeights) -> float:
    """Weighted performance score; with unit scales this is the plain
    convex combination beta*T + (1-beta)*B."""
    if t < 0 or b < 0:
        raise ValueError("T and B must be >= 0")
    return weights.beta * (t / weights.time_scale) + \
        (1.0 - weights.beta) * (b / weights.bw_scale)


def price_linear(counts: OpCounts, params: CryptoParams,
                 profile: CalibrationProfile) -> tuple:
    """(seconds, bytes) for one linear layer's homomorphic evaluation."""
    row = profile.row(params.n, words(params.bits_q))
    t = (counts.n_mult * row.t_mult + counts.n_rot * row.t_rot +
         counts.n_add * row.t_add)
    b = (counts.n_ct_in + counts.n_ct_out + counts.n_fresh_enc) * row.ct_bytes
    return t, float(b)


def nonlinear_cost(layer: NonLinearLayer, profile: CalibrationProfile) -> tuple:
    """(seconds, bytes) for a per-element interactive protocol.

    AvgPool costs nothing here: it folds into plain ciphertext additions
    inside the preceding homomorphic layer.
    """
    if layer.kind == "AvgPool":
        return 0.0, 0.0
    c = profile.nl_cost(layer.kind, layer.l_i)
    elements = layer.c_i * layer.n_i
    return elements * c.t_per_element, elements * float(c.b_per_element)


class PieEngine:
    """pie_optimize with per-fingerprint memoization.

    Layers repeat heavily across search episodes; results are fully
    determined by (layer fingerprint, config, model), so caching is
    outcome-transparent.
    """

    def __init__(self, cfg: PieConfig, model: NoiseModel = DEFAULT_MODEL,
                 table: Optional[SecurityTable] = None):
        self.cfg = cfg
        self.model = model
        self.table = table
        self._cache: dict = {}
        self._lock = threading.Lock()

    def optimize(self, layer: LinearLayer) -> CryptoParams:
        key = layer.fingerprint()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            if isinstance(hit, InfeasibleError):
                raise hit
            return hit
        try:
            params = pie_optimize(layer, self.cfg, self.model, self.table)
        except InfeasibleError as e:
            with self._lock:
                self._cache[key] = e
            raise
        with self._lock:
            self._cache[key] = params
        return params


def characterize_network(net: Network, pie_cfg: PieConfig,
                         profile: CalibrationProfile,
                         model: NoiseModel = DEFAULT_MODEL,
                         table: Optional[SecurityTable] = None,
                         engine: Optional[PieEngine] = None,
                         quant_range: tuple = (2, 16)) -> CostReport:
    """Per-layer crypto instantiation + pricing, aggregated into a
    CostReport whose totals are exact sums of the per-layer breakdown."""
    violations = validate_network(net, quant_range=quant_range)
    if violations:
        raise ValidationError(violations)
    if engine is None:
        engine = PieEngine(pie_cfg, model, table)
    rows = []
    t_pahe = 0.0
    t_gc = 0.0
    for i, layer in enumerate(net.layers):
        if isinstance(layer, LinearLayer):
            try:
                params = engine.optimize(layer)
            except InfeasibleError as e:
                raise LayerInfeasibleError(i, e) from None
            counts = op_counts(layer, params.n)
            t, b = price_linear(counts, params, profile)
            t_pahe += t
            rows.append(LayerCost(
                index=i, kind=layer.kind, t=t, b=b,
                n_mult=counts.n_mult, n_rot=counts.n_rot, n_add=counts.n_add,
                n_ciphertexts=counts.n_ct_in + counts.n_ct_out + counts.n_fresh_enc,
                crypto=params))
        else:
            t, b = nonlinear_cost(layer, profile)
            t_gc += t
            rows.append(LayerCost(index=i, kind=layer.kind, t=t, b=b,
                                  n_elements=layer.c_i * layer.n_i))
    return CostReport(per_layer=tuple(rows), t_pahe=t_pahe, t_gc=t_gc)


# ---------------------------------------------------------------------------
# Calibration: measure primitive-op costs with the mini cryptosystem
# ---------------------------------------------------------------------------

ROT_OVERHEAD_FACTOR = 8.0  # rot ~ plain-mult plus key-switch NTT work


def ct_bytes(n: int, n_words: int) -> int:
    """Two ring elements per ciphertext, n coefficients, 8-byte words."""
    return 2 * n * n_words * 8


def calibrate(params_list, reps: int = 5,
              rot_overhead: float = ROT_OVERHEAD_FACTOR,
              nonlinear: Optional[dict] = None,
              profile_name: str = "measured") -> CalibrationProfile:
    """Wall-clock medians of homomorphic add and plaintext multiply per
    (n, words) row, measured on the mini cryptosystem.  Rotation is
    priced as a plain multiply times a configured key-switch overhead
    (no rotation keys are implemented).  Must run serially.
    """
    from . import noise as _noise

    rows = {}
    for params in params_list:
        sk = _noise.keygen(params, seed=1)
        m = [0] * params.n
        ct = _noise.mini_enc(m, params, sk, seed=2)
        w = [1] * params.n
        t_add = _median_time(lambda: _noise.ct_add(ct, ct), reps)
        t_mult = _median_time(lambda: _noise.ct_plain_mult(ct, w), reps)
        nw = words(params.bits_q)
        rows[(params.n, nw)] = LinearOpCost(
            t_mult=t_mult, t_rot=t_mult * rot_overhead, t_add=t_add,
            ct_bytes=ct_bytes(params.n, nw))
    nl = nonlinear if nonlinear is not None else {
        "ReLU": NonLinearCost(t_per_element=55.1e-6, b_per_element=10463.0),
        "Square": NonLinearCost(t_per_element=2.0e-6, b_per_element=96.0),
    }
    return CalibrationProfile(rows=rows, nonlinear=dict(nl),
                              profile_name=profile_name, source="measured")


def _median_time(fn, reps: int) -> float:
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)
