"""Complex-valued neural-network toolkit for wideband spectrum segmentation.

The package synthesizes labeled multi-signal IQ datasets, trains a
complex-valued residual segmentation network (or its real-valued
counterpart) with focal/cross-entropy losses and a complex-plane IoU
stopping criterion, and evaluates against an energy-detection baseline.
"""

from .cmodel import AdamState, ModelConfig, build, load_checkpoint, save_checkpoint
from .ctensor import IQFrame, SpectrumFrame, dft, fft
from .dataset import Dataset, generate_dataset
from .lad import LadConfig, lad_detect
from .objectives import (BoxZ, OccupancyMask, PredictedSpectrum, Segment, binarize,
                         boxes_from_masks, cbce, cfl, ciou, detection_metrics,
                         extract_segments, optimal_assignment, rbce, rfl, riou,
                         stopping_criterion)
from .pipeline import TrainConfig, evaluate, fine_tune, timing_report, train
from .siggen import GenConfig, SignalSpec, compose_sample, modulate

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BoxZ", "Dataset", "GenConfig", "IQFrame", "LadConfig", "ModelConfig",
    "OccupancyMask", "PredictedSpectrum", "Segment", "SignalSpec", "SpectrumFrame",
    "TrainConfig", "binarize", "boxes_from_masks", "build", "cbce", "cfl", "ciou",
    "compose_sample", "detection_metrics", "dft", "evaluate", "extract_segments",
    "fft", "fine_tune", "generate_dataset", "lad_detect", "load_checkpoint",
    "modulate", "optimal_assignment", "rbce", "rfl", "riou", "save_checkpoint",
    "stopping_criterion", "timing_report", "train",
]
