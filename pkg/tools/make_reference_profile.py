"""Regenerate src/ciphernas/data/reference_profile.json.

Per-op times follow t_op(n, words) = c_op * n * log2(n) * words with
rot:mult:add = 8 : 1 : 0.1, and c_mult is solved so that the shipped
CIFAR baseline network's homomorphic time comes out at the published
3.22 s.  The ReLU byte cost is solved so the same network's total
bandwidth lands at the published 1.815 GB; the ReLU time is the
published 55.1 us per evaluation.  This makes the bundled baseline
checks machine-independent; `ciphernas calibrate` can overwrite the
profile with measured numbers.
"""
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ciphernas.model import (CalibrationProfile, LinearLayer, LinearOpCost,
                             NonLinearCost, parse_network)
from ciphernas.packing import op_counts
from ciphernas.pce import PieEngine, ct_bytes, words
from ciphernas.pie import PieConfig

DATA = Path(__file__).resolve().parents[1] / "src" / "ciphernas" / "data"

PAHE_TIME_TARGET = 3.22         # seconds
BANDWIDTH_TARGET = 1.815e9      # bytes
RELU_T = 55.1e-6                # seconds per evaluation
ROT_FACTOR = 8.0
ADD_FACTOR = 0.1
DIMS = (1024, 2048, 4096, 8192, 16384)
WORDS = (1, 2, 3, 4)


def main():
    net = parse_network((DATA / "gazelle_cifar_baseline.json").read_text())
    engine = PieEngine(PieConfig(delta=1e-2, mc_trials=300, mc_seed=0xC0FFEE))
    weighted_ops = 0.0
    pahe_bytes = 0
    relu_count = 0
    for layer in net.layers:
        if isinstance(layer, LinearLayer):
            params = engine.optimize(layer)
            c = op_counts(layer, params.n)
            nw = words(params.bits_q)
            unit = params.n * (params.n.bit_length() - 1) * nw
            weighted_ops += unit * (c.n_mult + ROT_FACTOR * c.n_rot + ADD_FACTOR * c.n_add)
            pahe_bytes += (c.n_ct_in + c.n_ct_out + c.n_fresh_enc) * ct_bytes(params.n, nw)
        elif layer.kind == "ReLU":
            relu_count += layer.c_i * layer.n_i
    c_mult = PAHE_TIME_TARGET / weighted_ops
    relu_b = (BANDWIDTH_TARGET - pahe_bytes) / relu_count
    print(f"c_mult = {c_mult:.6e}  pahe_bytes = {pahe_bytes}  relu_count = {relu_count}  "
          f"relu_b = {relu_b:.2f}")

    rows = {}
    for n in DIMS:
        for w in WORDS:
            unit = n * (n.bit_length() - 1) * w
            rows[(n, w)] = LinearOpCost(
                t_mult=c_mult * unit,
                t_rot=ROT_FACTOR * c_mult * unit,
                t_add=ADD_FACTOR * c_mult * unit,
                ct_bytes=ct_bytes(n, w))
    profile = CalibrationProfile(
        rows=rows,
        nonlinear={
            "ReLU": NonLinearCost(t_per_element=RELU_T, b_per_element=round(relu_b, 1)),
            "Square": NonLinearCost(t_per_element=5.0e-6, b_per_element=128.0),
        },
        profile_name="reference",
        source="reference")
    bad = profile.check()
    assert not bad, bad
    (DATA / "reference_profile.json").write_text(profile.to_json())
    print("wrote", DATA / "reference_profile.json")


if __name__ == "__main__":
    main()
