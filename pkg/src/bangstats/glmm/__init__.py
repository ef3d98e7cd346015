"""Mixed-model engine: specs, design matrices, and the two-family fitter."""

from .design import (ColumnDef, DesignBundle, DesignError, RandomBlockInfo,
                     build_design)
from .fit import (ConvergenceRecord, FitError, FitOptions, FittedModel,
                  PredictScale, ThetaStructure, VarianceComponent, blups,
                  fit, loglik, predict)
from .gradients import loglik_gradient, loglik_theta
from .modelspec import (Covariate, Factor, Family, Indicator, Interaction,
                        Intercept, ModelSpec, RandomTerm)

__all__ = [
    "ColumnDef", "ConvergenceRecord", "Covariate", "DesignBundle",
    "DesignError", "Factor", "Family", "FitError", "FitOptions",
    "FittedModel", "Indicator", "Interaction", "Intercept", "ModelSpec",
    "PredictScale", "RandomBlockInfo", "RandomTerm", "ThetaStructure",
    "VarianceComponent", "blups", "build_design", "fit", "loglik",
    "loglik_gradient", "loglik_theta", "predict",
]
