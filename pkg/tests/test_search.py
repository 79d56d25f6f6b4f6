import itertools

import numpy as np
import pytest

from helpers import random_blocks
from rdoqlab.codec import (DEADZONE_OFFSET, NIR_OFFSET, QuantParams,
                           make_quant_params, scalar_quantize)
from rdoqlab.rate import block_rate
from rdoqlab.search import (SearchConfig, _refine_candidates,
                            batch_block_rate, batch_rd_cost,
                            brute_force_oracle, greedy_group_refine,
                            make_label, rd_cost, rdoq_baseline)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(passes=0)
    assert SearchConfig().passes == 2


def test_rd_cost_zero_block():
    p = QuantParams(22, 8.0, 0.5, 3.0)
    c = rd_cost(np.zeros((4, 4)), np.zeros((4, 4), dtype=np.int64), p)
    assert c.distortion == 0.0
    assert c.rate == 1
    assert c.cost == 3.0


def test_rd_cost_single_coefficient():
    p = QuantParams(10, 2.0, 0.5, 0.7)
    x = np.zeros((4, 4))
    q = np.zeros((4, 4), dtype=np.int64)
    x[1, 1] = 1.6
    q[1, 1] = 2
    c = rd_cost(x, q, p)
    assert c.distortion == pytest.approx(4 * 0.16)
    assert c.rate == 21
    assert c.cost == pytest.approx(0.64 + 21 * 0.7)


def test_rd_cost_shape_mismatch():
    with pytest.raises(ValueError):
        rd_cost(np.zeros((4, 4)), np.zeros((4, 8)), QuantParams(22, 8, 0.5, 1))


def test_rd_cost_identity():
    rng = np.random.default_rng(20)
    p = make_quant_params(27)
    x = rng.normal(scale=2, size=(8, 8))
    q = np.round(x).astype(np.int64)
    c = rd_cost(x, q, p)
    assert c.cost == c.distortion + p.lam * c.rate
    assert c.rate == block_rate(q)


def test_rdoq_baseline_lambda_zero_is_nir():
    rng = np.random.default_rng(21)
    p = QuantParams(22, 8.0, DEADZONE_OFFSET, 0.0)
    nir = QuantParams(22, 8.0, NIR_OFFSET, 0.0)
    for _ in range(50):
        x = rng.normal(scale=rng.uniform(0.3, 4.0), size=(4, 4))
        assert np.array_equal(rdoq_baseline(x, p), scalar_quantize(x, nir))


def test_rdoq_baseline_zero_input():
    p = make_quant_params(37)
    assert np.abs(rdoq_baseline(np.zeros((8, 8)), p)).max() == 0


def test_rdoq_baseline_beats_both_starts():
    rng = np.random.default_rng(22)
    p = make_quant_params(22)
    nirp = QuantParams(p.qp, p.step, NIR_OFFSET, p.lam)
    dzp = QuantParams(p.qp, p.step, DEADZONE_OFFSET, p.lam)
    for x in random_blocks(rng, 200, 4):
        j = rd_cost(x, rdoq_baseline(x, p), p).cost
        assert j <= rd_cost(x, scalar_quantize(x, nirp), p).cost
        assert j <= rd_cost(x, scalar_quantize(x, dzp), p).cost


def test_rdoq_baseline_rate_monotone_in_lambda():
    rng = np.random.default_rng(23)
    for x in random_blocks(rng, 20, 4):
        rates = []
        for lam in (0.0, 0.5, 2.0, 8.0, 32.0):
            p = QuantParams(22, 8.0, DEADZONE_OFFSET, lam)
            rates.append(block_rate(rdoq_baseline(x, p)))
        assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_greedy_refine_fixed_point():
    rng = np.random.default_rng(24)
    p = make_quant_params(22)
    for x in random_blocks(rng, 20, 4):
        q1 = greedy_group_refine(x, rdoq_baseline(x, p), p)
        q2 = greedy_group_refine(x, q1, p)
        assert np.array_equal(q1, q2)


def test_greedy_refine_zero_init_unchanged():
    p = make_quant_params(22)
    x = np.random.default_rng(25).normal(size=(4, 4))
    q0 = np.zeros((4, 4), dtype=np.int64)
    assert np.array_equal(greedy_group_refine(x, q0, p), q0)


def test_greedy_refine_never_increases_cost():
    rng = np.random.default_rng(26)
    p = make_quant_params(32)
    for x in random_blocks(rng, 50, 8):
        q0 = rdoq_baseline(x, p)
        q1 = greedy_group_refine(x, q0, p)
        assert rd_cost(x, q1, p).cost <= rd_cost(x, q0, p).cost


def test_greedy_refine_shape_check():
    p = make_quant_params(22)
    with pytest.raises(ValueError):
        greedy_group_refine(np.zeros((5, 5)), np.zeros((5, 5)), p)


def test_greedy_matches_oracle_100_blocks():
    rng = np.random.default_rng(27)
    p = make_quant_params(22)
    cfg = SearchConfig(passes=1)
    for x in random_blocks(rng, 100, 4):
        q0 = rdoq_baseline(x, p)
        got = greedy_group_refine(x, q0, p, cfg)
        want = brute_force_oracle(x, _refine_candidates(q0.ravel()), p)
        assert np.array_equal(got, want)


def test_oracle_singleton_candidates():
    p = make_quant_params(22)
    x = np.random.default_rng(28).normal(size=(4, 4))
    q = np.round(x).astype(np.int64)
    cands = [[int(v)] for v in q.ravel()]
    assert np.array_equal(brute_force_oracle(x, cands, p), q)


def test_oracle_lambda_zero_picks_nir():
    rng = np.random.default_rng(29)
    p = QuantParams(22, 8.0, 0.5, 0.0)
    x = rng.normal(scale=2, size=(4, 4))
    nir = scalar_quantize(x, p)
    cands = [[int(v) - 1, int(v), int(v) + 1] if i < 10 else [int(v)]
             for i, v in enumerate(nir.ravel())]
    assert np.array_equal(brute_force_oracle(x, cands, p), nir)


def test_oracle_space_limit():
    p = make_quant_params(22)
    cands = [list(range(40))] * 16
    with pytest.raises(ValueError):
        brute_force_oracle(np.zeros((4, 4)), cands, p)


def _toy_reference(x, candidates, params):
    """Independent exhaustive enumeration for single-group toy blocks,
    iterating with itertools in candidate order."""
    s2 = params.step ** 2
    best_key, best = None, None
    for combo in itertools.product(*candidates):
        q = np.array(combo, dtype=np.int64).reshape(x.shape)
        d = s2 * float(np.sum((q - x) ** 2))
        mags = np.abs(q).ravel()
        bits = 1
        if mags.any():
            bits += mags.size
            for m in mags:
                if m:
                    bits += 1 + 2 * int(m).bit_length() - 1
        j = d + params.lam * bits
        key = (j, int(mags.sum()), tuple(int(m) for m in mags),
               tuple(int(v) for v in q.ravel()))
        if best_key is None or key < best_key:
            best_key, best = key, q
    return best


def test_oracle_matches_independent_toy_enumeration():
    rng = np.random.default_rng(30)
    p = make_quant_params(27)
    for _ in range(30):
        x = rng.normal(scale=rng.uniform(0.5, 3.0), size=(2, 2))
        base = np.round(x).astype(np.int64)
        cands = [sorted({int(v) - 1, int(v), int(v) + 1})
                 for v in base.ravel()]
        got = brute_force_oracle(x, cands, p)
        want = _toy_reference(x, cands, p)
        assert np.array_equal(got, want)


def test_monotone_chain():
    rng = np.random.default_rng(31)
    cfg = SearchConfig()
    for qp in (22, 32):
        p = make_quant_params(qp, offset=NIR_OFFSET)
        nirp = QuantParams(p.qp, p.step, NIR_OFFSET, p.lam)
        dzp = QuantParams(p.qp, p.step, DEADZONE_OFFSET, p.lam)
        for x in random_blocks(rng, 100, 4):
            base = rdoq_baseline(x, p)
            _, ref = make_label(x, p, cfg)
            j_ref = rd_cost(x, ref, p).cost
            j_base = rd_cost(x, base, p).cost
            j_sq = min(rd_cost(x, scalar_quantize(x, nirp), p).cost,
                       rd_cost(x, scalar_quantize(x, dzp), p).cost)
            assert j_ref <= j_base <= j_sq


def test_make_label_zero_block():
    p = make_quant_params(22, offset=NIR_OFFSET)
    q_sq, q_ref = make_label(np.zeros((4, 4)), p)
    assert np.abs(q_sq).max() == 0
    assert np.abs(q_ref).max() == 0


def test_make_label_improves_on_deadzone_sq():
    rng = np.random.default_rng(32)
    p = make_quant_params(22, offset=NIR_OFFSET)
    dzp = QuantParams(p.qp, p.step, DEADZONE_OFFSET, p.lam)
    j_ref_sum, j_dz_sum = 0.0, 0.0
    for x in random_blocks(rng, 1000, 4):
        _, q_ref = make_label(x, p)
        j_ref_sum += rd_cost(x, q_ref, p).cost
        j_dz_sum += rd_cost(x, scalar_quantize(x, dzp), p).cost
    assert j_ref_sum < j_dz_sum


def test_sign_equivariance():
    rng = np.random.default_rng(33)
    p = make_quant_params(27, offset=NIR_OFFSET)
    for x in random_blocks(rng, 50, 4):
        q_sq, q_ref = make_label(x, p)
        q_sq_n, q_ref_n = make_label(-x, p)
        assert np.array_equal(q_sq_n, -q_sq)
        assert np.array_equal(q_ref_n, -q_ref)


def test_batch_costs_match_scalar_path():
    rng = np.random.default_rng(34)
    p = make_quant_params(27)
    x = random_blocks(rng, 40, 8)
    q = np.round(x).astype(np.int64)
    rates = batch_block_rate(q)
    costs = batch_rd_cost(x, q, p)
    for i in range(x.shape[0]):
        ref = rd_cost(x[i], q[i], p)
        assert rates[i] == ref.rate
        assert costs[i] == pytest.approx(ref.cost, rel=1e-12)
