"""Block transforms, QP mapping, scalar quantizers and sign handling.

Everything here is pure and deterministic: pixel blocks in, scaled
transform coefficients out, and back again. The transform is the
floating-point orthonormal 2D DCT-II (exactly invertible), not an
integer approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

SUPPORTED_BLOCK_SIZES = (4, 8, 16, 32)

QP_MIN = 0
QP_MAX = 51

DEFAULT_LAMBDA_ALPHA = 0.57

# Nearest-integer rounding offset; the deadzone quantizer uses a smaller
# offset to bias rounding toward zero.
NIR_OFFSET = 0.5
DEADZONE_OFFSET = 1.0 / 3.0


@dataclass(frozen=True)
class QuantParams:
    """Quantization parameter set: QP, step size, rounding offset, lambda."""

    qp: int
    step: float
    offset: float
    lam: float

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not (0.0 <= self.offset <= 1.0):
            raise ValueError(f"offset must be in [0, 1], got {self.offset}")
        # lam == 0 is allowed so distortion-only searches are expressible.
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def qp_to_step(qp: int) -> float:
    """Quantization step size s = 2^((qp - 4) / 6)."""
    if not (QP_MIN <= qp <= QP_MAX):
        raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {qp}")
    return float(2.0 ** ((qp - 4) / 6.0))


def qp_to_lambda(qp: int, alpha: float = DEFAULT_LAMBDA_ALPHA) -> float:
    """Rate-distortion trade-off lambda = alpha * 2^((qp - 12) / 3)."""
    if not (QP_MIN <= qp <= QP_MAX):
        raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {qp}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(alpha * 2.0 ** ((qp - 12) / 3.0))


def make_quant_params(
    qp: int,
    offset: float = DEADZONE_OFFSET,
    alpha: float = DEFAULT_LAMBDA_ALPHA,
) -> QuantParams:
    return QuantParams(qp=qp, step=qp_to_step(qp), offset=offset,
                       lam=qp_to_lambda(qp, alpha))


def _check_square(block: np.ndarray) -> int:
    block = np.asarray(block)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"expected a square 2-D block, got shape {block.shape}")
    return block.shape[0]


def dct_forward(residual: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II of an N x N residual block."""
    n = _check_square(residual)
    if n not in SUPPORTED_BLOCK_SIZES:
        raise ValueError(f"unsupported block size {n}")
    return scipy.fft.dctn(np.asarray(residual, dtype=np.float64), norm="ortho")


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_forward` (orthonormal 2D DCT-III)."""
    n = _check_square(coeffs)
    if n not in SUPPORTED_BLOCK_SIZES:
        raise ValueError(f"unsupported block size {n}")
    return scipy.fft.idctn(np.asarray(coeffs, dtype=np.float64), norm="ortho")


def dc_predict(frame: np.ndarray, row: int, col: int, n: int,
               bitdepth: int = 8) -> np.ndarray:
    """DC prediction for the n x n block at (row, col) of a luma plane.

    Every sample is predicted as the rounded mean of the original pixels
    in the row above and the column left of the block. With no neighbors
    at all the prediction is mid-gray, 2^(bitdepth - 1).
    """
    frame = np.asarray(frame)
    h, w = frame.shape
    if row < 0 or col < 0 or row + n > h or col + n > w:
        raise ValueError(
            f"block ({row},{col}) size {n} out of bounds for {h}x{w} frame")
    neighbors = []
    if row > 0:
        neighbors.append(frame[row - 1, col:col + n])
    if col > 0:
        neighbors.append(frame[row:row + n, col - 1])
    if not neighbors:
        dc = 1 << (bitdepth - 1)
    else:
        dc = int(np.round(np.mean(np.concatenate(
            [np.asarray(v, dtype=np.float64) for v in neighbors]))))
    return np.full((n, n), dc, dtype=np.int64)


def scalar_quantize(x: np.ndarray, params: QuantParams) -> np.ndarray:
    """Sign-symmetric scalar quantization q = sign(x) * floor(|x| + o).

    ``x`` holds scaled transform coefficients (already divided by the
    step size); with o = 1/2 this is nearest integer rounding.
    """
    x = np.asarray(x, dtype=np.float64)
    mags = np.floor(np.abs(x) + params.offset)
    return (np.sign(x) * mags).astype(np.int64)


def split_sign(x: np.ndarray, q: np.ndarray):
    """Split (x, q) into magnitudes plus a sign mask taken from x.

    Zero coefficients get sign +1 so that split/merge is total.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q)
    if x.shape != q.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {q.shape}")
    signs = np.where(x < 0, -1, 1).astype(np.int64)
    return np.abs(x), np.abs(q).astype(np.int64), signs


def merge_sign(mags: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Re-insert signs into level magnitudes."""
    mags = np.asarray(mags)
    if np.any(mags < 0):
        raise ValueError("level magnitudes must be non-negative")
    return (mags * signs).astype(np.int64)
