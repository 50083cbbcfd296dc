"""Deterministic surrogate accuracy model.

Stands in for the external trainer during engine tests and surrogate
searches.  Closed form:

    A(net) = A_base(depth, filters) * prod over linear layers of
             g(l_i) * g(l_f),        g(l) = 1 - 2^{-(l-1)}

with A_base saturating in capacity (conv depth and total filter count).
Strictly increasing in every quantizer; pure and total on valid
networks.
"""
from __future__ import annotations

import math

from .model import LinearLayer, Network

A_FLOOR = 0.35
A_SPAN = 0.60
FILTER_SCALE = 48.0
DEPTH_SCALE = 1.5


def quant_factor(l: int) -> float:
    if l < 1:
        raise ValueError("quantizer must be >= 1")
    return 1.0 - 2.0 ** (-(l - 1))


def a_base(depth: int, total_filters: int) -> float:
    """Saturating capacity term: more conv layers and more filters help,
    with diminishing returns."""
    cap = (1.0 - math.exp(-total_filters / FILTER_SCALE)) * \
          (1.0 - math.exp(-depth / DEPTH_SCALE))
    return A_FLOOR + A_SPAN * cap


def surrogate_accuracy(net: Network) -> float:
    linear = net.linear_layers()
    convs = [l for l in linear if not l.is_fc]
    base = a_base(depth=len(linear), total_filters=sum(l.c_o for l in convs))
    a = base
    for layer in linear:
        a *= quant_factor(layer.l_i) * quant_factor(layer.l_f)
    return a
