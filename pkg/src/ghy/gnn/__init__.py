"""Hyperbolic graph neural networks: HGNN, HGCN, H2H-GCN and HGCAE."""

from .layers import (Diagnostics, HeadResult, LayerParams, curvature_change, feature_lift,
                     fermi_dirac_decoder, h2h_aggregate, h2h_lorentz_linear, hgcae_layer,
                     hgcn_attention_aggregate, hgcn_linear, hgnn_layer, reorthogonalize,
                     tangent_logreg_head)
from .models import (KINDS, ModelConfig, TrainResult, embed_from_params, hgcae_loss,
                     load_checkpoint, save_checkpoint, train_model)

__all__ = [
    "Diagnostics", "HeadResult", "LayerParams", "curvature_change", "feature_lift",
    "fermi_dirac_decoder", "h2h_aggregate", "h2h_lorentz_linear", "hgcae_layer",
    "hgcn_attention_aggregate", "hgcn_linear", "hgnn_layer", "reorthogonalize",
    "tangent_logreg_head", "KINDS", "ModelConfig", "TrainResult", "embed_from_params",
    "hgcae_loss", "load_checkpoint", "save_checkpoint", "train_model",
]
