"""Monotone log-concave MLE and semiparametric EM for symmetric location mixtures."""

from .exceptions import (ComponentCollapseError, DegenerateDataError, DegenerateWeightsError,
                         InconsistentInputsError, InvalidSampleError, LcsemError,
                         ZeroDensityError)
from .gmm_baseline import GaussianMixture, fit_gmm, gmm_log_likelihood, gmm_posteriors
from .mixture_model import (MixtureModel, SymmetricComponent, component_log_density,
                            log_likelihood, mixture_density, posterior_weights)
from .sem_fit import (SemConfig, SemTrace, fit_sem, jensen_gap, m_step_f, m_step_mu,
                      m_step_pi, run_sem)
from .shape_mle import (MonotoneLogConcaveFit, WeightedSample, cdf, fit_monotone_logconcave,
                        log_density, segment_exp_integral, verify_optimality)

__version__ = "0.1.0"
