"""Conformer encoder-decoder: configuration, parameters, forward pass, surgery."""
from .config import (BlockConfig, ConfigError, ModelConfig, Vocab, reference_config,
                     uniform_config)
from .params import ParameterSet, build_model, count_params, param_shapes
from .surgery import AdaptedParams, LhucState, apply_lhuc, replace_projections

__all__ = [
    "AdaptedParams", "BlockConfig", "ConfigError", "LhucState", "ModelConfig",
    "ParameterSet", "Vocab", "apply_lhuc", "build_model", "count_params",
    "reference_config", "param_shapes", "replace_projections", "uniform_config",
]
