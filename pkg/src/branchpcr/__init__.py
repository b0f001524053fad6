"""Confidence intervals and simulation for branching amplification processes.

A population of particles grows by random duplication (efficiency lambda_k in
cycle k); each duplication hands the copy its parent's state plus a random
increment with mean mu and variance nu. The package computes certified
envelopes for the moments of sampled states, exact small-instance references,
estimators for mu with finite-population corrections, and reproducible
Monte Carlo simulation.
"""

from .estimator import (
    EstimateReport,
    chebyshev_interval,
    estimate_report,
    finite_population_bracket,
    point_estimate,
    poisson_interval,
)
from .kinetics import MMParams, w_bounds
from .moments import (
    MomentEnvelope,
    MutationLaw,
    exact_sample_moments,
    moment_envelope,
    poisson_law,
    size_law,
)
from .schedule import DerivedSequences, EfficiencySchedule, build_schedule, derived_sequences
from .simulator import (
    PopulationCapExceeded,
    ProcessSpec,
    enumerate_tiny,
    monte_carlo_moments,
    simulate,
)

__version__ = "0.1.0"
