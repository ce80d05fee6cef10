"""Echo video diagnosis from segmentation-network latent features.

A small numpy autodiff engine drives a 3D U-Net that segments the left
ventricle; its 32 bottleneck kernels are the feature source for GradCAM
ranking (FSR) or LASSO (FSL) selection, followed by an SVM stack, an MLP or a
random forest.  Synthetic phantom echoes stand in for clinical data.
"""
from .cv import kfold_split
from .phantom import LabeledEcho, PhantomConfig, generate_case, generate_dataset
from .pipeline import ExperimentConfig, MetricsReport, compute_metrics, emit_report, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "LabeledEcho", "MetricsReport", "PhantomConfig", "compute_metrics",
    "emit_report", "generate_case", "generate_dataset", "kfold_split", "run_experiment",
]
