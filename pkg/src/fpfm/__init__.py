"""Function projection for flow matching: adapt a learned velocity basis to a new
target distribution from samples alone."""
from .basis import (BasisSet, CoefficientVector, FunctionBasis, GramSystem, TrainConfig,
                    estimate_gram_rhs, make_projected_field, project_static, project_temporal,
                    train_static, train_temporal)
from .dynamic import (ConditionalVelocityEstimate, DynamicConfig, conditional_velocity,
                      make_dynamic_field, project_dynamic, train_dynamic)
from .estimators import FunctionProjectionFlow
from .flow import IntegratorConfig, integrate, integrate_backward, make_path_batch, sample_noise
from .metrics import precision_recall
from .nn import Mlp, solve_ridge

__all__ = [
    "BasisSet", "CoefficientVector", "ConditionalVelocityEstimate", "DynamicConfig",
    "FunctionBasis", "FunctionProjectionFlow", "GramSystem", "IntegratorConfig", "Mlp",
    "TrainConfig", "conditional_velocity", "estimate_gram_rhs", "integrate",
    "integrate_backward", "make_dynamic_field", "make_path_batch", "make_projected_field",
    "precision_recall", "project_dynamic", "project_static", "project_temporal",
    "sample_noise", "solve_ridge", "train_dynamic", "train_static", "train_temporal",
]

__version__ = "0.1.0"
