"""Rate-distortion optimized quantization laboratory.

Generates search-based quantization labels for DCT blocks, trains
small neural refiners on them, and compares everything with RD and
BD-rate metrics.
"""

from .codec import (DEADZONE_OFFSET, NIR_OFFSET, QuantParams, dc_predict,
                    dct_forward, dct_inverse, make_quant_params,
                    merge_sign, qp_to_lambda, qp_to_step, scalar_quantize,
                    split_sign)
from .data import (BuildSummary, DataFormatError, DatasetHeader, FrameSource,
                   build_dataset, read_dataset, read_pgm, read_stats,
                   write_dataset, write_pgm, write_stats)
from .metrics import (EvalResult, RDPoint, bd_rate, evaluate_quantizers,
                      psnr, rd_relative, report_text, rd_point_table)
from .nn.io import ModelFormatError, read_model, write_model
from .nn.models import (ClassSet, ModelParams, SensitivityMap,
                        StandardizationStats, compute_sensitivity_map,
                        init_arm, init_fcnn, quantize_with_network)
from .nn.train import Hyperparams, TrainingSplit, train
from .rate import RATE_MODEL_NAME, block_rate, eg0_length, rate_delta
from .search import (RDCost, SearchConfig, brute_force_oracle,
                     greedy_group_refine, make_label, rd_cost, rdoq_baseline)

__version__ = "0.1.0"

__all__ = [
    "DEADZONE_OFFSET", "NIR_OFFSET", "QuantParams", "dc_predict",
    "dct_forward", "dct_inverse", "make_quant_params", "merge_sign",
    "qp_to_lambda", "qp_to_step", "scalar_quantize", "split_sign",
    "BuildSummary", "DataFormatError", "DatasetHeader", "FrameSource",
    "build_dataset", "read_dataset", "read_pgm", "read_stats",
    "write_dataset", "write_pgm", "write_stats",
    "EvalResult", "RDPoint", "bd_rate", "evaluate_quantizers", "psnr",
    "rd_relative", "report_text", "rd_point_table",
    "ModelFormatError", "read_model", "write_model",
    "ClassSet", "ModelParams", "SensitivityMap", "StandardizationStats",
    "compute_sensitivity_map", "init_arm", "init_fcnn",
    "quantize_with_network",
    "Hyperparams", "TrainingSplit", "train",
    "RATE_MODEL_NAME", "block_rate", "eg0_length", "rate_delta",
    "RDCost", "SearchConfig", "brute_force_oracle", "greedy_group_refine",
    "make_label", "rd_cost", "rdoq_baseline",
]
