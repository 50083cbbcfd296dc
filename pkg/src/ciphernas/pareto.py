"""Non-dominated set extraction over (accuracy, time, bandwidth)."""
from __future__ import annotations

from typing import Sequence


def dominates(x, y) -> bool:
    """x dominates y: accuracy no worse and costs no worse, with at
    least one strict improvement.  Points are (A, T, B)."""
    ax, tx, bx = x
    ay, ty, by = y
    if ax < ay or tx > ty or bx > by:
        return False
    return ax > ay or tx < ty or bx < by


def pareto_indices(points: Sequence) -> list:
    """Indices of the non-dominated points, in input order.  Duplicate
    points do not dominate each other, so all copies survive."""
    out = []
    for i, p in enumerate(points):
        if not any(dominates(q, p) for j, q in enumerate(points) if j != i):
            out.append(i)
    return out
