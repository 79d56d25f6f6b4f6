"""RD cost, coordinate-descent quantization, and exhaustive group refinement.

The searches operate on magnitudes (signs are fixed by the input) and
break exact cost ties deterministically: smaller sum of level
magnitudes first, then the lexicographically smaller magnitude vector
in raster order. The per-group exhaustive refinement enumerates the
candidate product space vectorized, then re-ranks a small shortlist
with the canonical cost so its result matches the brute-force oracle
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import DEADZONE_OFFSET, NIR_OFFSET, QuantParams, scalar_quantize
from .rate import GROUP_SIDE, block_rate, level_bits

_SHORTLIST_RTOL = 1e-7
_ORACLE_SPACE_LIMIT = 1 << 24


@dataclass(frozen=True)
class RDCost:
    distortion: float
    rate: int
    cost: float


@dataclass(frozen=True)
class SearchConfig:
    passes: int = 2
    accept_only_if_better: bool = True

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError(f"passes must be >= 1, got {self.passes}")


def rd_cost(x: np.ndarray, q: np.ndarray, params: QuantParams) -> RDCost:
    """J = D + lambda * R with D = step^2 * sum((q - x)^2), R = block_rate(q)."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q)
    if x.shape != q.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {q.shape}")
    d = params.step ** 2 * float(np.sum((q.astype(np.float64) - x) ** 2))
    r = block_rate(q)
    return RDCost(distortion=d, rate=r, cost=d + params.lam * r)


def _group_cost(xg: np.ndarray, qg: np.ndarray, params: QuantParams) -> float:
    """Canonical cost of one 4x4 group; identical arithmetic to rd_cost
    restricted to the group (same raster order, same reduction)."""
    d = params.step ** 2 * float(np.sum((qg.astype(np.float64) - xg) ** 2))
    bits = 1
    mags = np.abs(qg)
    if mags.any():
        bits += 16
        for m in mags:
            bits += level_bits(int(m))
    return d + params.lam * bits


def _level_bits_table(max_mag: int) -> np.ndarray:
    mags = np.arange(max(int(max_mag), 1) + 1)
    bits = np.zeros_like(mags)
    nz = mags > 0
    # sign bit + EG0(|q| - 1); floor(log2(m)) via bit_length on small ints
    bl = np.array([int(m).bit_length() for m in mags])
    bits[nz] = 1 + 2 * bl[nz] - 1
    return bits


def _tie_key(j: float, levels: np.ndarray):
    mags = np.abs(levels)
    return (j, int(mags.sum()), tuple(int(m) for m in mags),
            tuple(int(v) for v in levels))


def _best_group_assignment(xg: np.ndarray, candidates: list[np.ndarray],
                           params: QuantParams) -> np.ndarray:
    """Exact argmin of the group cost over the candidate product space.

    Enumeration and scoring are vectorized in float64; every candidate
    within a relative tolerance of the vectorized minimum is re-scored
    with the canonical cost and ranked under the documented tie-break.
    """
    counts = [len(c) for c in candidates]
    total = int(np.prod(counts, dtype=np.int64))
    if total > _ORACLE_SPACE_LIMIT:
        raise ValueError(f"candidate space too large: {total}")
    m = len(candidates)

    # levels matrix: one row per combination
    levels = np.empty((total, m), dtype=np.int64)
    rep, tile = total, 1
    for i, cand in enumerate(candidates):
        rep //= counts[i]
        col = np.repeat(np.tile(np.asarray(cand, dtype=np.int64), tile), rep)
        levels[:, i] = col
        tile *= counts[i]

    dist = params.step ** 2 * np.sum((levels - xg[None, :]) ** 2, axis=1)
    mags = np.abs(levels)
    lb = _level_bits_table(mags.max() if mags.size else 0)
    contrib = lb[mags].sum(axis=1)
    coded = mags.any(axis=1)
    bits = 1 + coded * (16 + contrib)
    j = dist + params.lam * bits

    jmin = j.min()
    tol = _SHORTLIST_RTOL * (1.0 + abs(jmin))
    short = np.nonzero(j <= jmin + tol)[0]
    best_key, best = None, None
    for idx in short:
        lv = levels[idx]
        key = _tie_key(_group_cost(xg, lv, params), lv)
        if best_key is None or key < best_key:
            best_key, best = key, lv
    return best


def _refine_candidates(qg: np.ndarray) -> list[np.ndarray]:
    """Per-coefficient candidate sets {q, sign(q) * (|q| - 1)}; zeros are
    fixed points with a single candidate."""
    cands = []
    for v in qg:
        v = int(v)
        if v == 0:
            cands.append(np.array([0], dtype=np.int64))
        elif v > 0:
            cands.append(np.array([v, v - 1], dtype=np.int64))
        else:
            cands.append(np.array([v, v + 1], dtype=np.int64))
    return cands


def greedy_group_refine(x: np.ndarray, q_init: np.ndarray,
                        params: QuantParams,
                        cfg: SearchConfig = SearchConfig()) -> np.ndarray:
    """Per-group exhaustive refinement, groups visited in raster order.

    Each 4x4 group is optimized exhaustively over the {keep, one step
    toward zero} candidate sets while the other groups stay fixed; the
    sweep repeats cfg.passes times. The output cost never exceeds the
    input cost.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.array(q_init, dtype=np.int64, copy=True)
    if x.shape != q.shape or x.ndim != 2 or x.shape[0] != x.shape[1] \
            or x.shape[0] % GROUP_SIDE:
        raise ValueError(f"unsupported shapes {x.shape} / {q.shape}")
    n = x.shape[0]
    for _ in range(cfg.passes):
        changed = False
        for gr in range(0, n, GROUP_SIDE):
            for gc in range(0, n, GROUP_SIDE):
                sl = (slice(gr, gr + GROUP_SIDE), slice(gc, gc + GROUP_SIDE))
                xg = x[sl].ravel()
                qg = q[sl].ravel()
                best = _best_group_assignment(xg, _refine_candidates(qg), params)
                if not np.array_equal(best, qg):
                    q[sl] = best.reshape(GROUP_SIDE, GROUP_SIDE)
                    changed = True
        if not changed:
            break
    # guard against accumulated float noise across groups
    if rd_cost(x, q, params).cost > rd_cost(x, np.asarray(q_init), params).cost:
        return np.array(q_init, dtype=np.int64, copy=True)
    return q


def brute_force_oracle(x: np.ndarray, candidates: list[list[int]],
                       params: QuantParams) -> np.ndarray:
    """Exact argmin of J over a per-coefficient candidate product space.

    Enumerates the whole product space (rejected above 2^24) in chunks
    of mixed-radix combination indices, scoring every combination from
    per-candidate distortion and bit tables; the winners within a small
    tolerance of the minimum are re-ranked with the full-block rd_cost
    under the documented tie-break. Ties prefer the smaller magnitude
    sum, then the lexicographically smaller magnitudes.
    """
    x = np.asarray(x, dtype=np.float64)
    flat_x = x.ravel()
    m = flat_x.size
    if len(candidates) != m:
        raise ValueError(f"need {m} candidate sets, got {len(candidates)}")
    counts = np.array([len(c) for c in candidates], dtype=np.int64)
    total = 1
    for c in counts:
        total *= int(c)
        if total > _ORACLE_SPACE_LIMIT:
            raise ValueError(f"candidate space too large: > {_ORACLE_SPACE_LIMIT}")

    # per-coefficient candidate tables, padded to a common width
    width = int(counts.max())
    cand_tab = np.zeros((m, width), dtype=np.int64)
    dist_tab = np.zeros((m, width), dtype=np.float64)
    bits_tab = np.zeros((m, width), dtype=np.int64)
    nz_tab = np.zeros((m, width), dtype=np.int64)
    for i, cand in enumerate(candidates):
        cv = np.asarray(cand, dtype=np.int64)
        cand_tab[i, :cv.size] = cv
        dist_tab[i, :cv.size] = params.step ** 2 * (cv - flat_x[i]) ** 2
        bits_tab[i, :cv.size] = [level_bits(int(abs(v))) for v in cv]
        nz_tab[i, :cv.size] = cv != 0

    n = x.shape[0] if x.ndim == 2 else 0
    if x.ndim == 2 and n % GROUP_SIDE == 0:
        gid = (np.arange(m) // (n * GROUP_SIDE)) * (n // GROUP_SIDE) \
            + (np.arange(m) % n) // GROUP_SIDE
    else:
        gid = np.zeros(m, dtype=np.int64)  # single group for toy shapes
    ngroups = int(gid.max()) + 1
    onehot_g = np.zeros((m, ngroups), dtype=np.float64)
    onehot_g[np.arange(m), gid] = 1.0

    # mixed-radix digit extraction: combination index -> candidate choice
    radix = np.ones(m, dtype=np.int64)
    for i in range(m - 2, -1, -1):
        radix[i] = radix[i + 1] * counts[i + 1]

    chunk = 1 << 16
    shortlist: list[np.ndarray] = []
    shortlist_j: list[float] = []
    jmin = np.inf
    rows = np.arange(m)
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // radix[None, :]) % counts[None, :]
        dist = dist_tab[rows, digits].sum(axis=1)
        gbits = bits_tab[rows, digits] @ onehot_g
        gnz = nz_tab[rows, digits] @ onehot_g
        gsize = onehot_g.sum(axis=0)
        bits = ngroups + ((gsize[None, :] + gbits) * (gnz > 0)).sum(axis=1)
        j = dist + params.lam * bits
        cmin = float(j.min())
        jmin = min(jmin, cmin)
        tol = _SHORTLIST_RTOL * (1.0 + abs(cmin))
        keep = np.nonzero(j <= cmin + tol)[0]
        for kk in keep:
            shortlist.append(cand_tab[rows, digits[kk]])
            shortlist_j.append(float(j[kk]))

    tol = _SHORTLIST_RTOL * (1.0 + abs(jmin))
    best_key, best = None, None
    for lv, jv in zip(shortlist, shortlist_j):
        if jv > jmin + tol:
            continue
        j = _canonical_cost(x, lv.reshape(x.shape), params)
        key = _tie_key(j, lv)
        if best_key is None or key < best_key:
            best_key, best = key, lv
    return best.reshape(x.shape)


def _canonical_cost(x: np.ndarray, q: np.ndarray, params: QuantParams) -> float:
    """Full-block cost; toy shapes not divisible by 4 are treated as a
    single coefficient group."""
    if x.ndim == 2 and x.shape[0] == x.shape[1] and x.shape[0] % GROUP_SIDE == 0:
        return rd_cost(x, q, params).cost
    d = params.step ** 2 * float(np.sum((q.astype(np.float64) - x) ** 2))
    mags = np.abs(q).ravel()
    bits = 1
    if mags.any():
        bits += mags.size
        for m in mags:
            bits += level_bits(int(m))
    return d + params.lam * bits


def batch_block_rate(q: np.ndarray) -> np.ndarray:
    """Vectorized block_rate over a (B, n, n) batch of level blocks."""
    q = np.asarray(q)
    b, n = q.shape[0], q.shape[1]
    if q.shape[2] != n or n % GROUP_SIDE:
        raise ValueError(f"unsupported batch shape {q.shape}")
    g = n // GROUP_SIDE
    mags = np.abs(q)
    lb = _level_bits_table(int(mags.max()) if mags.size else 0)
    contrib = lb[mags].reshape(b, g, GROUP_SIDE, g, GROUP_SIDE).sum(axis=(2, 4))
    nz = (mags > 0).reshape(b, g, GROUP_SIDE, g, GROUP_SIDE).any(axis=(2, 4))
    return (1 + (16 + contrib) * nz).sum(axis=(1, 2))


def batch_rd_cost(x: np.ndarray, q: np.ndarray,
                  params: QuantParams) -> np.ndarray:
    """Vectorized J over a (B, n, n) batch; matches rd_cost per block up
    to float summation order."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q)
    d = params.step ** 2 * ((q.astype(np.float64) - x) ** 2).sum(axis=(1, 2))
    return d + params.lam * batch_block_rate(q)


class _GroupRateState:
    """Incremental per-group rate bookkeeping for coordinate descent."""

    def __init__(self, q: np.ndarray):
        n = q.shape[0]
        self.n = n
        self.g = n // GROUP_SIDE
        mags = np.abs(q)
        self.contrib = np.zeros((self.g, self.g), dtype=np.int64)
        self.nz = np.zeros((self.g, self.g), dtype=np.int64)
        for r in range(n):
            for c in range(n):
                m = int(mags[r, c])
                gi, gj = r // GROUP_SIDE, c // GROUP_SIDE
                self.contrib[gi, gj] += level_bits(m)
                self.nz[gi, gj] += m != 0

    def delta(self, r: int, c: int, old_mag: int, new_mag: int) -> int:
        gi, gj = r // GROUP_SIDE, c // GROUP_SIDE
        s, z = self.contrib[gi, gj], self.nz[gi, gj]
        s2 = s - level_bits(old_mag) + level_bits(new_mag)
        z2 = z - (old_mag != 0) + (new_mag != 0)
        old_bits = 1 + (16 + s) * (z > 0)
        new_bits = 1 + (16 + s2) * (z2 > 0)
        return int(new_bits - old_bits)

    def apply(self, r: int, c: int, old_mag: int, new_mag: int) -> None:
        gi, gj = r // GROUP_SIDE, c // GROUP_SIDE
        self.contrib[gi, gj] += level_bits(new_mag) - level_bits(old_mag)
        self.nz[gi, gj] += (new_mag != 0) - (old_mag != 0)


_RDOQ_SWEEP_LIMIT = 8


def rdoq_baseline(x: np.ndarray, params: QuantParams) -> np.ndarray:
    """Coordinate-descent RDOQ starting from the better of NIR and
    deadzone scalar quantization.

    Coefficients are visited in reverse raster order; each one picks the
    cost-argmin among {0, floor(|x|), floor(|x|) + 1} carrying the sign
    of x. Sweeps repeat until a full sweep makes no change or the sweep
    limit (8) is reached. The cost never increases.
    """
    x = np.asarray(x, dtype=np.float64)
    nir = scalar_quantize(x, QuantParams(params.qp, params.step, NIR_OFFSET,
                                         params.lam))
    dz = scalar_quantize(x, QuantParams(params.qp, params.step,
                                        DEADZONE_OFFSET, params.lam))
    j_nir = rd_cost(x, nir, params).cost
    j_dz = rd_cost(x, dz, params).cost
    q = np.array(nir if j_nir <= j_dz else dz, dtype=np.int64)
    start = q.copy()

    n = x.shape[0]
    s2 = params.step ** 2
    state = _GroupRateState(q)
    signs = np.where(x < 0, -1, 1)
    floors = np.floor(np.abs(x)).astype(np.int64)

    order = [(r, c) for r in range(n) for c in range(n)][::-1]
    for _ in range(_RDOQ_SWEEP_LIMIT):
        changed = False
        for r, c in order:
            cur = int(q[r, c])
            f = int(floors[r, c])
            sgn = int(signs[r, c])
            cands = sorted({0, sgn * f, sgn * (f + 1)}, key=abs)
            xv = x[r, c]
            cur_mag = abs(cur)
            best_key, best = (0.0, cur_mag), cur
            for cand in cands:
                if cand == cur:
                    continue
                dd = s2 * ((cand - xv) ** 2 - (cur - xv) ** 2)
                dr = state.delta(r, c, cur_mag, abs(cand))
                key = (dd + params.lam * dr, abs(cand))
                if key < best_key:
                    best_key, best = key, cand
            if best != cur:
                state.apply(r, c, cur_mag, abs(best))
                q[r, c] = best
                changed = True
        if not changed:
            break
    if rd_cost(x, q, params).cost > min(j_nir, j_dz):
        return start
    return q


def make_label(x: np.ndarray, params: QuantParams,
               cfg: SearchConfig = SearchConfig()):
    """Produce the (q_SQ, q_ref) training pair for a block of scaled TCs.

    q_SQ uses the configured offset in ``params``; q_ref is the greedy
    group refinement of the coordinate-descent baseline, kept only when
    it actually lowers the cost.
    """
    q_sq = scalar_quantize(x, params)
    q_base = rdoq_baseline(x, params)
    q_ref = greedy_group_refine(x, q_base, params, cfg)
    if rd_cost(x, q_ref, params).cost >= rd_cost(x, q_base, params).cost:
        q_ref = q_base
    return q_sq, q_ref
