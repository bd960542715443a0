"""Anytime-valid F/t tests, confidence sequences and regression-adjusted ATE inference
for streaming linear models."""

__version__ = "0.1.0"

from avlm.regression import (DesignPoint, RegressionSnapshot, SufficientStats, classical_f,  # noqa: E402
                             snapshot, update)
from avlm.sequential import (ConfidenceRegion, MixtureSpec, SequentialTest, TestResult,  # noqa: E402
                             confidence_interval_t, confidence_region_F, log_bayes_factor,
                             log_bayes_factor_t, phi_bayes_optimal, phi_freq_optimal, sequential_p)

__all__ = [
    "ConfidenceRegion", "DesignPoint", "MixtureSpec", "RegressionSnapshot", "SequentialTest",
    "SufficientStats", "TestResult", "classical_f", "confidence_interval_t", "confidence_region_F",
    "log_bayes_factor", "log_bayes_factor_t", "phi_bayes_optimal", "phi_freq_optimal",
    "sequential_p", "snapshot", "update",
]
