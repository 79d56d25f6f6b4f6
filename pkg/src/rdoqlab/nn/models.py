"""Quantization-refinement networks: fully-convolutional and auto-regressive.

Both architectures consume standardized magnitudes of the scaled
transform coefficients and their scalar-quantized levels, and emit
per-coefficient logits over a small set of additive level adjustments.
The auto-regressive model conditions each position on the adjustments
at earlier raster positions through masked dense layers; gated linear
projections of the conditioning features are injected into every
auto-regressive layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..codec import QuantParams, NIR_OFFSET, scalar_quantize, split_sign, merge_sign
from ..rate import RATE_MODEL_NAME, GROUP_SIDE, level_bits
from . import layers as L

STD_FLOOR = 1e-6
BN_MOMENTUM = 0.9

FCNN_HIDDEN = {4: (256, 256, 256), 8: (256, 256, 256, 256),
               16: (300, 300, 300, 300, 300)}
ARM_HIDDEN = {4: (256, 256, 256), 8: (384, 384, 384), 16: (512, 512, 512)}


@dataclass(frozen=True)
class ClassSet:
    """Ordered set of admissible level adjustments; must contain -1 and 0."""

    values: tuple[int, ...] = (-1, 0)

    def __post_init__(self):
        v = self.values
        if list(v) != sorted(set(v)):
            raise ValueError(f"class values must be strictly increasing: {v}")
        if -1 not in v or 0 not in v:
            raise ValueError(f"class set must contain -1 and 0: {v}")

    @property
    def k(self) -> int:
        return len(self.values)

    def index_of(self, deltas: np.ndarray) -> np.ndarray:
        arr = np.asarray(self.values)
        idx = np.searchsorted(arr, deltas)
        idx_c = np.clip(idx, 0, self.k - 1)
        if np.any(arr[idx_c] != deltas):
            raise ValueError("adjustment outside class set")
        return idx_c

    def deltas_of(self, indices: np.ndarray) -> np.ndarray:
        return np.asarray(self.values)[indices]


@dataclass(frozen=True)
class StandardizationStats:
    """Per-position, per-channel input statistics from the training set."""

    mean: np.ndarray  # (2, n, n)
    std: np.ndarray   # (2, n, n), floored to STD_FLOOR

    @classmethod
    def compute(cls, x_mags: np.ndarray, q_mags: np.ndarray):
        mean = np.stack([x_mags.mean(axis=0), q_mags.mean(axis=0)])
        std = np.stack([x_mags.std(axis=0), q_mags.std(axis=0)])
        return cls(mean=mean, std=np.maximum(std, STD_FLOOR))

    def apply(self, x_mags: np.ndarray, q_mags: np.ndarray) -> np.ndarray:
        """Standardize and stack into NHWC input, channels (x, q_sq)."""
        xs = (x_mags - self.mean[0]) / self.std[0]
        qs = (q_mags - self.mean[1]) / self.std[1]
        return np.stack([xs, qs], axis=-1)

    @classmethod
    def identity(cls, n: int):
        return cls(mean=np.zeros((2, n, n)), std=np.ones((2, n, n)))


@dataclass(frozen=True)
class SensitivityMap:
    """Per-position loss weights, normalized to mean exactly 1."""

    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("sensitivity weights must be non-negative")
        if abs(self.weights.mean() - 1.0) > 1e-9:
            raise ValueError("sensitivity map must have mean 1")


def compute_sensitivity_map(xs: np.ndarray, q_refs: np.ndarray,
                            params: QuantParams) -> SensitivityMap:
    """Empirical RD impact of unilateral +/-1 level shifts per position.

    For every sample and position, both shifts are applied to the
    magnitude of the refined level (clamped at zero, so a down shift on
    a zero level is a no-op, matching the adjustment semantics) and the
    absolute cost changes are accumulated; the grand mean is normalized
    to exactly 1.
    """
    xs = np.asarray(xs, dtype=np.float64)
    q = np.asarray(q_refs, dtype=np.int64)
    if xs.ndim != 3 or xs.shape != q.shape:
        raise ValueError(f"bad sample shapes {xs.shape} / {q.shape}")
    if xs.shape[0] == 0:
        raise ValueError("empty sample set")
    s, n, _ = xs.shape
    g = n // GROUP_SIDE
    s2 = params.step ** 2

    mags = np.abs(q)
    max_m = int(mags.max()) + 1
    lb = np.array([level_bits(m) for m in range(max_m + 2)])
    contrib = lb[mags]
    gs = contrib.reshape(s, g, GROUP_SIDE, g, GROUP_SIDE).sum(axis=(2, 4))
    gz = (mags > 0).reshape(s, g, GROUP_SIDE, g, GROUP_SIDE).sum(axis=(2, 4))
    gs_full = np.repeat(np.repeat(gs, GROUP_SIDE, axis=1), GROUP_SIDE, axis=2)
    gz_full = np.repeat(np.repeat(gz, GROUP_SIDE, axis=1), GROUP_SIDE, axis=2)
    old_bits = 1 + (16 + gs_full) * (gz_full > 0)

    signs = np.where(q < 0, -1, np.where(q > 0, 1, np.where(xs < 0, -1, 1)))
    acc = np.zeros((n, n), dtype=np.float64)
    for shift in (-1, 1):
        m2 = np.maximum(mags + shift, 0)
        q2 = signs * m2
        dd = s2 * ((q2 - xs) ** 2 - (q - xs) ** 2)
        s_new = gs_full - contrib + lb[m2]
        z_new = gz_full - (mags > 0) + (m2 > 0)
        new_bits = 1 + (16 + s_new) * (z_new > 0)
        dr = new_bits - old_bits
        acc += np.abs(dd + params.lam * dr).sum(axis=0)

    return SensitivityMap(weights=acc / acc.mean())


@dataclass
class ModelParams:
    """Everything needed to run or resume a model: architecture tag,
    geometry, weights, batch-norm state, and input statistics."""

    arch: str
    n: int
    qp: int
    class_set: ClassSet
    hidden: tuple[int, ...]
    params: dict[str, np.ndarray]
    state: dict[str, np.ndarray]
    stats: StandardizationStats
    rate_model: str = RATE_MODEL_NAME
    sq_offset: float = NIR_OFFSET

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def astype(self, dtype):
        return replace(
            self,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            state={k: v.astype(dtype) for k, v in self.state.items()})

    def copy(self):
        return replace(self,
                       params={k: v.copy() for k, v in self.params.items()},
                       state={k: v.copy() for k, v in self.state.items()})


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_fcnn(n: int, qp: int, class_set: ClassSet = ClassSet(),
              hidden: tuple[int, ...] | None = None, seed: int = 0,
              stats: StandardizationStats | None = None,
              sq_offset: float = NIR_OFFSET,
              dtype=np.float32) -> ModelParams:
    if n == 32:
        raise ValueError("32x32 blocks are not supported by the networks")
    if hidden is None:
        hidden = FCNN_HIDDEN[n]
    rng = np.random.default_rng(seed)
    k = class_set.k
    params, state = {}, {}
    cin = 2
    for i, ch in enumerate(hidden):
        params[f"conv{i}_w"] = _he_uniform(rng, (3, 3, cin, ch), 9 * cin, dtype)
        params[f"conv{i}_b"] = np.zeros(ch, dtype=dtype)
        params[f"bn{i}_g"] = np.ones(ch, dtype=dtype)
        params[f"bn{i}_b"] = np.zeros(ch, dtype=dtype)
        state[f"bn{i}_mean"] = np.zeros(ch, dtype=dtype)
        state[f"bn{i}_var"] = np.ones(ch, dtype=dtype)
        cin = ch
    params["head_w"] = _he_uniform(rng, (1, 1, cin, k), cin, dtype)
    params["head_b"] = np.zeros(k, dtype=dtype)
    return ModelParams(arch="fcnn", n=n, qp=qp, class_set=class_set,
                       hidden=tuple(hidden), params=params, state=state,
                       stats=stats or StandardizationStats.identity(n),
                       sq_offset=sq_offset)


def build_arm_masks(n: int, k: int, h: int, dtype=np.float64):
    """Connectivity masks over raster-flattened positions.

    Hidden unit u is assigned position u % n^2. The input mask is
    strictly lower triangular in positions (one-hot features at
    position j feed only units at later positions); hidden and output
    masks are inclusive.
    """
    n2 = n * n
    upos = np.arange(h) % n2
    in_pos = np.arange(n2 * k) // k
    m_in = (in_pos[:, None] < upos[None, :]).astype(dtype)
    m_hid = (upos[:, None] <= upos[None, :]).astype(dtype)
    out_pos = np.arange(n2 * k) // k
    m_out = (upos[:, None] <= out_pos[None, :]).astype(dtype)
    return m_in, m_hid, m_out


def init_arm(n: int, qp: int, class_set: ClassSet = ClassSet(),
             hidden: tuple[int, ...] | None = None, seed: int = 0,
             stats: StandardizationStats | None = None,
             sq_offset: float = NIR_OFFSET,
             dtype=np.float32) -> ModelParams:
    if n == 32:
        raise ValueError("32x32 blocks are not supported by the networks")
    if hidden is None:
        hidden = ARM_HIDDEN[n]
    if len(set(hidden)) != 1:
        raise ValueError("auto-regressive stack uses a single hidden width")
    h = hidden[0]
    rng = np.random.default_rng(seed)
    k = class_set.k
    n2 = n * n
    params, state = {}, {}
    cin = 2 * n2
    for i in range(len(hidden)):
        params[f"cond{i}_w"] = _he_uniform(rng, (cin, h), cin, dtype)
        params[f"cond{i}_b"] = np.zeros(h, dtype=dtype)
        params[f"cbn{i}_g"] = np.ones(h, dtype=dtype)
        params[f"cbn{i}_b"] = np.zeros(h, dtype=dtype)
        state[f"cbn{i}_mean"] = np.zeros(h, dtype=dtype)
        state[f"cbn{i}_var"] = np.ones(h, dtype=dtype)
        cin = h
    ain = n2 * k
    for i in range(len(hidden)):
        params[f"ar{i}_w"] = _he_uniform(rng, (ain, h), max(ain, 1), dtype)
        params[f"ar{i}_b"] = np.zeros(h, dtype=dtype)
        params[f"glu{i}_a_w"] = _he_uniform(rng, (h, h), h, dtype)
        params[f"glu{i}_a_b"] = np.zeros(h, dtype=dtype)
        params[f"glu{i}_s_w"] = _he_uniform(rng, (h, h), h, dtype)
        params[f"glu{i}_s_b"] = np.zeros(h, dtype=dtype)
        params[f"abn{i}_g"] = np.ones(h, dtype=dtype)
        params[f"abn{i}_b"] = np.zeros(h, dtype=dtype)
        state[f"abn{i}_mean"] = np.zeros(h, dtype=dtype)
        state[f"abn{i}_var"] = np.ones(h, dtype=dtype)
        ain = h
    params["out_w"] = _he_uniform(rng, (h, n2 * k), h, dtype)
    params["out_b"] = np.zeros(n2 * k, dtype=dtype)
    return ModelParams(arch="arm", n=n, qp=qp, class_set=class_set,
                       hidden=tuple(hidden), params=params, state=state,
                       stats=stats or StandardizationStats.identity(n),
                       sq_offset=sq_offset)


def _bn_step(model, name, x, train, cache_sink):
    p, s = model.params, model.state
    out, cache, mean, var = L.batch_norm_forward(
        x, p[f"{name}_g"], p[f"{name}_b"], train=train,
        running_mean=s[f"{name}_mean"], running_var=s[f"{name}_var"])
    if train:
        dt = s[f"{name}_mean"].dtype
        s[f"{name}_mean"] = (BN_MOMENTUM * s[f"{name}_mean"]
                             + (1 - BN_MOMENTUM) * mean).astype(dt)
        s[f"{name}_var"] = (BN_MOMENTUM * s[f"{name}_var"]
                            + (1 - BN_MOMENTUM) * var).astype(dt)
    cache_sink[name] = cache
    return out


def fcnn_forward(model: ModelParams, x2: np.ndarray, train: bool = False):
    """FCNN forward pass. x2: standardized (B, n, n, 2) input.

    Returns logits (B, n, n, k) and the backward cache.
    """
    if model.arch != "fcnn":
        raise ValueError(f"expected fcnn model, got {model.arch}")
    caches = {}
    a = x2
    for i in range(len(model.hidden)):
        a, caches[f"conv{i}"] = L.conv2d_forward(
            a, model.params[f"conv{i}_w"], model.params[f"conv{i}_b"])
        a = _bn_step(model, f"bn{i}", a, train, caches)
        a, caches[f"relu{i}"] = L.relu_forward(a)
    logits, caches["head"] = L.conv2d_forward(
        a, model.params["head_w"], model.params["head_b"])
    return logits, caches


def fcnn_backward(model: ModelParams, dlogits: np.ndarray, caches) -> dict:
    grads = {}
    da, grads["head_w"], grads["head_b"] = L.conv2d_backward(
        dlogits, caches["head"])
    for i in reversed(range(len(model.hidden))):
        da = L.relu_backward(da, caches[f"relu{i}"])
        da, grads[f"bn{i}_g"], grads[f"bn{i}_b"] = L.batch_norm_backward(
            da, caches[f"bn{i}"])
        da, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = L.conv2d_backward(
            da, caches[f"conv{i}"])
    return grads


def _arm_masks_for(model: ModelParams):
    dt = model.params["out_w"].dtype
    return build_arm_masks(model.n, model.class_set.k, model.hidden[0], dt)


def arm_forward(model: ModelParams, x2: np.ndarray, onehot: np.ndarray,
                train: bool = False):
    """Teacher-forced ARM forward pass.

    x2: standardized (B, n, n, 2); onehot: (B, n^2, k) one-hot encoding
    of the adjustment sequence in raster order. Returns logits of shape
    (B, n^2, k) where row i depends only on adjustments before i.
    """
    if model.arch != "arm":
        raise ValueError(f"expected arm model, got {model.arch}")
    bsz = x2.shape[0]
    n2 = model.n * model.n
    k = model.class_set.k
    if onehot.shape != (bsz, n2, k):
        raise ValueError(f"bad one-hot shape {onehot.shape}")
    m_in, m_hid, m_out = _arm_masks_for(model)
    caches = {"masks": (m_in, m_hid, m_out)}

    c = x2.reshape(bsz, 2 * n2)
    for i in range(len(model.hidden)):
        c, caches[f"cond{i}"] = L.dense_forward(
            c, model.params[f"cond{i}_w"], model.params[f"cond{i}_b"])
        c = _bn_step(model, f"cbn{i}", c, train, caches)
        c, caches[f"crelu{i}"] = L.relu_forward(c)
    caches["cond_out"] = c

    a = onehot.reshape(bsz, n2 * k)
    for i in range(len(model.hidden)):
        mask = m_in if i == 0 else m_hid
        z, caches[f"ar{i}"] = L.masked_dense_forward(
            a, model.params[f"ar{i}_w"], model.params[f"ar{i}_b"], mask)
        ga, caches[f"glu{i}_a"] = L.dense_forward(
            c, model.params[f"glu{i}_a_w"], model.params[f"glu{i}_a_b"])
        gsl, caches[f"glu{i}_s_lin"] = L.dense_forward(
            c, model.params[f"glu{i}_s_w"], model.params[f"glu{i}_s_b"])
        gs, caches[f"glu{i}_sig"] = L.sigmoid_forward(gsl)
        caches[f"glu{i}_prod"] = (ga, gs)
        z = z + ga * gs
        z = _bn_step(model, f"abn{i}", z, train, caches)
        a, caches[f"arelu{i}"] = L.relu_forward(z)
    logits, caches["out"] = L.masked_dense_forward(
        a, model.params["out_w"], model.params["out_b"], m_out)
    return logits.reshape(bsz, n2, k), caches


def arm_backward(model: ModelParams, dlogits: np.ndarray, caches) -> dict:
    bsz = dlogits.shape[0]
    n2 = model.n * model.n
    k = model.class_set.k
    grads = {}
    da, grads["out_w"], grads["out_b"] = L.masked_dense_backward(
        dlogits.reshape(bsz, n2 * k), caches["out"])
    dc_total = 0.0
    for i in reversed(range(len(model.hidden))):
        dz = L.relu_backward(da, caches[f"arelu{i}"])
        dz, grads[f"abn{i}_g"], grads[f"abn{i}_b"] = L.batch_norm_backward(
            dz, caches[f"abn{i}"])
        ga, gs = caches[f"glu{i}_prod"]
        dga = dz * gs
        dgs = dz * ga
        dgsl = L.sigmoid_backward(dgs, caches[f"glu{i}_sig"])
        dc_a, grads[f"glu{i}_a_w"], grads[f"glu{i}_a_b"] = L.dense_backward(
            dga, caches[f"glu{i}_a"])
        dc_s, grads[f"glu{i}_s_w"], grads[f"glu{i}_s_b"] = L.dense_backward(
            dgsl, caches[f"glu{i}_s_lin"])
        dc_total = dc_total + dc_a + dc_s
        da, grads[f"ar{i}_w"], grads[f"ar{i}_b"] = L.masked_dense_backward(
            dz, caches[f"ar{i}"])
    dc = dc_total
    for i in reversed(range(len(model.hidden))):
        dc = L.relu_backward(dc, caches[f"crelu{i}"])
        dc, grads[f"cbn{i}_g"], grads[f"cbn{i}_b"] = L.batch_norm_backward(
            dc, caches[f"cbn{i}"])
        dc, grads[f"cond{i}_w"], grads[f"cond{i}_b"] = L.dense_backward(
            dc, caches[f"cond{i}"])
    return grads


def one_hot_deltas(deltas: np.ndarray, class_set: ClassSet) -> np.ndarray:
    """(B, n, n) adjustments -> (B, n^2, k) one-hot, raster order."""
    bsz = deltas.shape[0]
    n2 = deltas.shape[1] * deltas.shape[2]
    idx = class_set.index_of(deltas.reshape(bsz, n2))
    oh = np.zeros((bsz, n2, class_set.k), dtype=np.float64)
    b, p = np.meshgrid(np.arange(bsz), np.arange(n2), indexing="ij")
    oh[b, p, idx] = 1.0
    return oh


def arm_decode(model: ModelParams, x2: np.ndarray) -> np.ndarray:
    """Greedy sequential decode: n^2 forward passes in raster order,
    feeding back the argmax class at each step. Returns class indices
    of shape (B, n^2)."""
    bsz = x2.shape[0]
    n2 = model.n * model.n
    k = model.class_set.k
    dt = model.params["out_w"].dtype
    onehot = np.zeros((bsz, n2, k), dtype=dt)
    chosen = np.zeros((bsz, n2), dtype=np.int64)
    for i in range(n2):
        logits, _ = arm_forward(model, x2, onehot, train=False)
        cls = np.argmax(logits[:, i, :], axis=1)
        chosen[:, i] = cls
        onehot[np.arange(bsz), i, cls] = 1.0
    return chosen


def network_logits(model: ModelParams, x2: np.ndarray,
                   onehot: np.ndarray | None = None, train: bool = False):
    if model.arch == "fcnn":
        logits, caches = fcnn_forward(model, x2, train=train)
        bsz = x2.shape[0]
        return logits.reshape(bsz, model.n * model.n, model.class_set.k), caches
    return arm_forward(model, x2, onehot, train=train)


def network_backward(model: ModelParams, dlogits: np.ndarray, caches) -> dict:
    if model.arch == "fcnn":
        bsz = dlogits.shape[0]
        return fcnn_backward(
            model, dlogits.reshape(bsz, model.n, model.n, model.class_set.k),
            caches)
    return arm_backward(model, dlogits, caches)


def adjustment_loss(logits: np.ndarray, labels: np.ndarray,
                    class_set: ClassSet,
                    sens_map: SensitivityMap | None = None,
                    mask: np.ndarray | None = None):
    """Sensitivity-weighted cross-entropy over a batch of blocks.

    logits: (B, n^2, k); labels: (B, n, n) or (B, n^2) adjustments from
    the class set; mask: per-coefficient multiplicative weights (a
    boolean zero-mask or float class weights). Zero-weight positions
    contribute no loss and are excluded from the mean. Returns
    (loss, dlogits).
    """
    bsz, n2, k = logits.shape
    idx = class_set.index_of(np.asarray(labels).reshape(bsz, n2))
    weights = np.ones((bsz, n2), dtype=logits.dtype)
    if sens_map is not None:
        weights *= sens_map.weights.reshape(1, n2).astype(logits.dtype)
    if mask is not None:
        weights *= np.asarray(mask).reshape(bsz, n2)
    loss, dflat = L.softmax_cross_entropy(
        logits.reshape(bsz * n2, k), idx.reshape(-1),
        weights.reshape(-1))
    return loss, dflat.reshape(bsz, n2, k)


def quantize_with_network(x: np.ndarray, model: ModelParams,
                          quant: QuantParams,
                          zero_mask: bool = True) -> np.ndarray:
    """Refine scalar quantization of a block (or batch of blocks) with a
    trained network: argmax adjustment per coefficient, optional
    zero-masking, magnitudes clamped at zero, signs re-inserted."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.shape[1] != model.n or xb.shape[2] != model.n:
        raise ValueError(
            f"model expects {model.n}x{model.n} blocks, got {xb.shape[1:]}")
    if quant.qp != model.qp:
        raise ValueError(f"model trained for QP {model.qp}, got {quant.qp}")
    sq_params = QuantParams(quant.qp, quant.step, model.sq_offset, quant.lam)
    q_sq = scalar_quantize(xb, sq_params)
    x_mags, q_mags, signs = split_sign(xb, q_sq)
    x2 = model.stats.apply(x_mags, q_mags.astype(np.float64))
    x2 = x2.astype(model.params["head_w" if model.arch == "fcnn"
                                else "out_w"].dtype)
    if model.arch == "fcnn":
        logits, _ = network_logits(model, x2, train=False)
        cls = np.argmax(logits, axis=2)
    else:
        cls = arm_decode(model, x2)
    deltas = model.class_set.deltas_of(cls).reshape(xb.shape)
    if zero_mask:
        deltas = np.where(q_mags == 0, 0, deltas)
    out_mags = np.maximum(q_mags + deltas, 0)
    q_out = merge_sign(out_mags, signs)
    return q_out[0] if single else q_out
