"""Quantizer comparison: RD deltas, PSNR, RD curves, and BD-rate.

BD-rate uses monotone piecewise cubic Hermite interpolation of
log10(rate) as a function of quality, integrated exactly over the
overlapping quality range. Quality is PSNR from this codec's own
reconstruction (DC prediction + inverse DCT), so BD-rate numbers are
internally comparable only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .codec import (QuantParams, dc_predict, dct_forward, dct_inverse,
                    make_quant_params, scalar_quantize, NIR_OFFSET,
                    DEADZONE_OFFSET)
from .data import FrameSource, extract_blocks, ingest
from .nn.models import ModelParams, quantize_with_network
from .search import (SearchConfig, batch_block_rate, batch_rd_cost,
                     greedy_group_refine, make_label, rdoq_baseline)

PSNR_CAP_DB = 99.0

DEFAULT_QP_GRID = (22, 27, 32, 37)

METHOD_NAMES = ("nir", "deadzone", "rdoq", "refined", "fcnn", "arm")
REFERENCE_METHOD = "deadzone"


@dataclass(frozen=True)
class RDPoint:
    rate: float     # mean bits per pixel
    quality: float  # PSNR dB

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.isfinite(self.quality):
            raise ValueError("quality must be finite")


def rd_relative(j_method: np.ndarray, j_reference: np.ndarray) -> float:
    """100 * (sum J_method - sum J_ref) / sum J_ref; aggregate-sum form."""
    j_method = np.asarray(j_method, dtype=np.float64)
    j_reference = np.asarray(j_reference, dtype=np.float64)
    if j_method.shape != j_reference.shape:
        raise ValueError("mismatched block sets")
    ref = float(j_reference.sum())
    return 100.0 * (float(j_method.sum()) - ref) / ref


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of coefficients whose adjustment class matches."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError("shape mismatch")
    return 100.0 * float(np.mean(predicted == labels))


def psnr(original: np.ndarray, reconstructed: np.ndarray,
         bitdepth: int = 8) -> float:
    """Pooled-MSE PSNR in dB, capped at 99 dB for identical inputs."""
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    if original.shape != reconstructed.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((original - reconstructed) ** 2))
    peak = float((1 << bitdepth) - 1)
    if mse == 0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def _curve_interpolant(points: list[RDPoint]):
    if len(points) < 4:
        raise ValueError(f"need >= 4 RD points, got {len(points)}")
    pts = sorted(points, key=lambda p: p.quality)
    q = np.array([p.quality for p in pts])
    r = np.log10([p.rate for p in pts])
    if np.any(np.diff(q) <= 0):
        raise ValueError("curve is not strictly monotone in quality")
    return PchipInterpolator(q, r), q


def bd_rate(test: list[RDPoint], reference: list[RDPoint]) -> float:
    """Bjontegaard delta rate of test vs reference, in percent."""
    f_test, q_test = _curve_interpolant(test)
    f_ref, q_ref = _curve_interpolant(reference)
    lo = max(q_test[0], q_ref[0])
    hi = min(q_test[-1], q_ref[-1])
    if hi <= lo:
        raise ValueError("curves have no overlapping quality range")
    int_test = f_test.antiderivative()
    int_ref = f_ref.antiderivative()
    avg_diff = ((int_test(hi) - int_test(lo))
                - (int_ref(hi) - int_ref(lo))) / (hi - lo)
    return 100.0 * (10.0 ** avg_diff - 1.0)


@dataclass
class MethodStats:
    method: str
    blocks: int
    mean_j: float
    mean_rate: float
    mean_distortion: float
    rd_pct: float
    accuracy_pct: float
    confusion: dict[tuple[int, int], int]
    bpp: float
    psnr_db: float


@dataclass
class EvalResult:
    n: int
    qps: tuple[int, ...]
    reports: dict[int, dict[str, MethodStats]] = field(default_factory=dict)

    def rd_points(self):
        rows = []
        for qp in self.qps:
            for method, st in self.reports[qp].items():
                rows.append((method, qp, st.bpp, st.psnr_db))
        return rows

    def curve(self, method: str) -> list[RDPoint]:
        return [RDPoint(self.reports[qp][method].bpp,
                        self.reports[qp][method].psnr_db)
                for qp in self.qps]


def _collect_blocks(sources, n):
    """(pixels (S,n,n), predictions (S,n,n), bitdepth)."""
    pix, preds = [], []
    bitdepth = None
    for src in sources:
        if bitdepth is None:
            bitdepth = src.bitdepth
        elif bitdepth != src.bitdepth:
            raise ValueError("mixed bitdepths in evaluation corpus")
        for plane in ingest(src):
            for row, col in extract_blocks(plane, n):
                pix.append(plane[row:row + n, col:col + n].astype(np.int64))
                preds.append(dc_predict(plane, row, col, n, src.bitdepth))
    if not pix:
        raise ValueError("no blocks in evaluation corpus")
    return np.stack(pix), np.stack(preds), bitdepth


def _method_levels(method: str, x: np.ndarray, params: QuantParams,
                   cfg: SearchConfig, models: dict | None,
                   zero_mask: bool):
    if method == "nir":
        return scalar_quantize(
            x, QuantParams(params.qp, params.step, NIR_OFFSET, params.lam))
    if method == "deadzone":
        return scalar_quantize(
            x, QuantParams(params.qp, params.step, DEADZONE_OFFSET, params.lam))
    if method == "rdoq":
        return np.stack([rdoq_baseline(xb, params) for xb in x])
    if method == "refined":
        return np.stack([make_label(xb, params, cfg)[1] for xb in x])
    if method in ("fcnn", "arm"):
        model = (models or {}).get((method, params.qp))
        if model is None:
            raise ValueError(
                f"no {method} model available for QP {params.qp}")
        return quantize_with_network(x, model, params, zero_mask=zero_mask)
    raise ValueError(f"unknown method {method!r}")


def evaluate_quantizers(sources: list[FrameSource], n: int,
                        qps=DEFAULT_QP_GRID,
                        methods=("nir", "deadzone", "rdoq", "refined"),
                        models: dict[tuple[str, int], ModelParams] | None = None,
                        cfg: SearchConfig = SearchConfig(),
                        alpha: float | None = None,
                        zero_mask: bool = True) -> EvalResult:
    """Run every method over the same blocks at each QP of the grid.

    Labels for the accuracy columns are the refined search results; the
    RD percentage is against the deadzone scalar quantizer.
    """
    methods = list(methods)
    if REFERENCE_METHOD not in methods:
        methods.insert(0, REFERENCE_METHOD)
    pix, preds, bitdepth = _collect_blocks(sources, n)
    result = EvalResult(n=n, qps=tuple(qps))
    maxval = (1 << bitdepth) - 1
    npix = pix.size
    kwargs = {} if alpha is None else {"alpha": alpha}

    for qp in qps:
        params = make_quant_params(qp, **kwargs)
        residual = pix.astype(np.float64) - preds
        x = np.stack([dct_forward(r) for r in residual]) / params.step

        level_sets = {m: _method_levels(m, x, params, cfg, models, zero_mask)
                      for m in methods}
        labels_q = (level_sets["refined"] if "refined" in level_sets
                    else _method_levels("refined", x, params, cfg, None, True))
        q_nir = (level_sets["nir"] if "nir" in level_sets
                 else _method_levels("nir", x, params, cfg, None, True))
        label_delta = np.abs(labels_q) - np.abs(q_nir)

        j_ref = batch_rd_cost(x, level_sets[REFERENCE_METHOD], params)
        report = {}
        for m in methods:
            q = level_sets[m]
            j = batch_rd_cost(x, q, params)
            rates = batch_block_rate(q)
            dist = j - params.lam * rates
            delta = np.abs(q) - np.abs(q_nir)
            conf: dict[tuple[int, int], int] = {}
            for lab, pred in zip(label_delta.reshape(-1), delta.reshape(-1)):
                key = (int(lab), int(pred))
                conf[key] = conf.get(key, 0) + 1
            recon_res = np.stack([dct_inverse(qb * params.step) for qb in q])
            recon = np.clip(np.round(preds + recon_res), 0, maxval)
            report[m] = MethodStats(
                method=m, blocks=x.shape[0],
                mean_j=float(j.mean()), mean_rate=float(rates.mean()),
                mean_distortion=float(dist.mean()),
                rd_pct=rd_relative(j, j_ref),
                accuracy_pct=accuracy(delta, label_delta),
                confusion=conf,
                bpp=float(rates.sum()) / npix,
                psnr_db=psnr(pix, recon, bitdepth))
        result.reports[qp] = report
    return result


def report_text(result: EvalResult) -> str:
    lines = [f"# quantizer evaluation  n={result.n}  "
             f"qps={','.join(str(q) for q in result.qps)}",
             f"# reference method for RD%: {REFERENCE_METHOD}"]
    for qp in result.qps:
        lines.append(f"\n== QP {qp} ==")
        lines.append(f"{'method':>10} {'blocks':>7} {'mean-J':>12} "
                     f"{'mean-bits':>10} {'mean-D':>12} {'RD%':>8} "
                     f"{'acc%':>7} {'bpp':>8} {'psnr':>7}")
        for m, st in result.reports[qp].items():
            lines.append(
                f"{m:>10} {st.blocks:>7d} {st.mean_j:>12.4f} "
                f"{st.mean_rate:>10.2f} {st.mean_distortion:>12.4f} "
                f"{st.rd_pct:>8.3f} {st.accuracy_pct:>7.3f} "
                f"{st.bpp:>8.5f} {st.psnr_db:>7.3f}")
    return "\n".join(lines) + "\n"


def rd_point_table(result: EvalResult) -> str:
    lines = ["method,qp,bpp,psnr_db"]
    for method, qp, bpp, quality in result.rd_points():
        lines.append(f"{method},{qp},{bpp:.8f},{quality:.6f}")
    return "\n".join(lines) + "\n"
