"""Saliency, epsilon-LRP and sampled-SHAP attributions for an MFCC frame classifier."""

__version__ = "0.1.0"

from .aggregate import (AggregatedAttribution, AttributionStats, attribution_stats, compare_stats,
                        slice_relative_frame, sum_per_frame, sum_per_window)
from .attribution import (AttributionTensor, BackgroundSample, LrpConfig, ShapConfig, attribute_windows,
                          build_background, compute_lrp, compute_saliency, compute_shap, exact_shapley)
from .features import AudioClip, FrameWindow, MfccMatrix, compute_mfcc, make_windows, read_wav
from .model import CHARSET, ModelParams, forward_trace, input_gradient, load_model, save_model, train_epoch
from .render import RenderSpec, color_of, export_csv, render_heatmap
