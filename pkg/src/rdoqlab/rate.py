"""Deterministic additive rate model for quantization levels.

Bits are estimated per 4x4 coefficient group with a fixed, non-adaptive
code: one coded-group flag, per-coefficient significance bits, and a
sign bit plus an order-0 Exp-Golomb code for each nonzero level. The
model is bit-exact and additive over groups, which is what the
exhaustive search and its oracle tests require.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GROUP_SIDE = 4
GROUP_COEFFS = GROUP_SIDE * GROUP_SIDE

RATE_MODEL_NAME = "eg-sig-v1"


@dataclass(frozen=True)
class RateModelSpec:
    name: str = RATE_MODEL_NAME
    group_side: int = GROUP_SIDE


def eg0_length(v: int) -> int:
    """Order-0 Exp-Golomb code length in bits: 2*floor(log2(v+1)) + 1."""
    if v < 0:
        raise ValueError(f"eg0_length expects a non-negative value, got {v}")
    return 2 * (int(v) + 1).bit_length() - 1


def level_bits(mag: int) -> int:
    """Bits contributed by one coefficient of magnitude ``mag`` inside a
    coded group, excluding its significance bit: sign + EG0(|q| - 1)."""
    if mag == 0:
        return 0
    return 1 + eg0_length(mag - 1)


def group_rate(levels: np.ndarray) -> int:
    """Rate of one 4x4 group of signed levels.

    1 bit coded-group flag; if any level is nonzero, 1 significance bit
    per coefficient plus sign and EG0 bits per nonzero level.
    """
    levels = np.asarray(levels).reshape(-1)
    if levels.size != GROUP_COEFFS:
        raise ValueError(f"group_rate expects 16 levels, got {levels.size}")
    mags = np.abs(levels)
    if not mags.any():
        return 1
    bits = 1 + GROUP_COEFFS
    for m in mags:
        bits += level_bits(int(m))
    return bits


def block_rate(q: np.ndarray) -> int:
    """Rate of an N x N level block: sum of group_rate over 4x4 groups."""
    q = np.asarray(q)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] % GROUP_SIDE:
        raise ValueError(f"unsupported block shape {q.shape}")
    n = q.shape[0]
    bits = 0
    for gr in range(0, n, GROUP_SIDE):
        for gc in range(0, n, GROUP_SIDE):
            bits += group_rate(q[gr:gr + GROUP_SIDE, gc:gc + GROUP_SIDE])
    return bits


def rate_delta(q: np.ndarray, pos: tuple[int, int], new_level: int) -> int:
    """Exact change in block_rate from setting q[pos] = new_level.

    Only the affected 4x4 group is re-evaluated; the result equals a
    full recomputation exactly because the model is additive per group.
    """
    q = np.asarray(q)
    n = q.shape[0]
    r, c = pos
    if not (0 <= r < n and 0 <= c < n):
        raise ValueError(f"position {pos} out of range for {n}x{n} block")
    gr, gc = (r // GROUP_SIDE) * GROUP_SIDE, (c // GROUP_SIDE) * GROUP_SIDE
    group = q[gr:gr + GROUP_SIDE, gc:gc + GROUP_SIDE]
    old_bits = group_rate(group)
    patched = group.copy()
    patched[r - gr, c - gc] = new_level
    return group_rate(patched) - old_bits
