"""Style-unified domain generalization on a small numpy CNN.

Instance styles (per-channel mean and std of an early feature map) from all
training images are clustered with a Gaussian mixture; the clusters are merged
into one "unified" style Gaussian; training re-styles every feature map with a
draw from that Gaussian and inference partially projects test features onto
its mean.
"""

from .align import AlignmentParams, align_to_style, partial_align
from .clustering import ClusterConfig, StyleClusterModel, fit_style_gmm, predict_cluster
from .datagen import DomainSpec, SyntheticDataset, default_family, generate_dataset, make_domain_family
from .desknet import DeskNet, gradient_check, loss_and_grad, sgd_step
from .errors import CStyleError
from .numerics import cholesky_psd, eigh_psd, regularize_psd, sqrt_psd
from .pipeline import (TrainConfig, distance_sweep, evaluate, infer, paired_leave_one_out,
                       run_leave_one_out, train)
from .style_stats import (GaussianStyle, InstanceStyle, compute_instance_style, domain_gap_terms,
                          estimate_domain_style, frechet_distance)
from .unified import UnifiedDomain, barycenter_gaussian, determine_unified_domain, sample_style

__all__ = [
    "AlignmentParams", "align_to_style", "partial_align",
    "ClusterConfig", "StyleClusterModel", "fit_style_gmm", "predict_cluster",
    "DomainSpec", "SyntheticDataset", "default_family", "generate_dataset", "make_domain_family",
    "DeskNet", "gradient_check", "loss_and_grad", "sgd_step",
    "CStyleError",
    "cholesky_psd", "eigh_psd", "regularize_psd", "sqrt_psd",
    "TrainConfig", "distance_sweep", "evaluate", "infer", "paired_leave_one_out", "run_leave_one_out", "train",
    "GaussianStyle", "InstanceStyle", "compute_instance_style", "domain_gap_terms", "estimate_domain_style",
    "frechet_distance",
    "UnifiedDomain", "barycenter_gaussian", "determine_unified_domain", "sample_style",
]
