"""Linear spectral estimators for phase retrieval."""

from .analysis import empirical_errors, moment_oracles, nmse, smse_lspe, smse_si
from .errors import ConfigError, FactorizationError, InputError, LspeError, NumericalError
from .kernel import Field, Rng, leading_eigenpair, solve_spd
from .lspe import (EstimatorSpec, PreparedEstimator, assemble, extract, quantities_complex, quantities_exp,
                   quantities_real, si_matrix)
from .model import Ensemble, MeasurementSystem, NoiseModel, SignalPrior, build_system, forward_measure
from .preprocess import Preprocessor

__version__ = "0.1.0"
