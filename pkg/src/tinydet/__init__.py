"""tinydet: differentiable building blocks and a desk-scale benchmark for
tiny surface-defect detection.

The package provides a Wasserstein-distance bounding-box loss, a
multi-branch attention block, an upsampling convolution block, a minimal
tensor engine with finite-difference gradient oracles, detection metrics,
a deterministic synthetic dataset generator, and a small detector that
assembles it all with an ablation ladder.
"""

from .boxes import BBox, Gaussian2D, NwdConfig, gaussian_of_box, iou, nwd, nwd_loss, wasserstein2_sq
from .detector import DetectorConfig, TinyDetector, model_flops, run_ablation, train
from .eucb import EucbBlock, plain_upsample_baseline
from .gradcheck import grad_check
from .metrics import Detection, EvalReport, GroundTruth, average_precision, map_report
from .msfa import MsfaBlock, branch_divergence, msfa_flops
from .synth import SynthConfig, dataset_stats, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Gaussian2D",
    "NwdConfig",
    "gaussian_of_box",
    "iou",
    "nwd",
    "nwd_loss",
    "wasserstein2_sq",
    "DetectorConfig",
    "TinyDetector",
    "model_flops",
    "run_ablation",
    "train",
    "EucbBlock",
    "plain_upsample_baseline",
    "grad_check",
    "Detection",
    "EvalReport",
    "GroundTruth",
    "average_precision",
    "map_report",
    "MsfaBlock",
    "branch_divergence",
    "msfa_flops",
    "SynthConfig",
    "dataset_stats",
    "generate_dataset",
]
