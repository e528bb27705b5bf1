"""Coarse-grained phase-space measurement toolkit."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

from .core import (
    HBAR,
    HBAR_SI,
    CoherentStateParams,
    Grid,
    HamiltonianSpec,
    NumericalGuardError,
    SlotDistribution,
    SlotPartition,
    UnitScale,
    WaveFunction,
    coherent_state,
    slot_index,
)
from .ehrenfest import drift_rate, ehrenfest_lower_bound, scenario_table, textbook_free_ehrenfest
from .liouville import discrete_characteristics, pushforward_evolve, semi_lagrangian_evolve, total_variation
from .operators import build_povm_element, projectivity_error_closed_form, projectivity_error_numeric
from .quantum import PropagatorConfig, evolve, measure_collapse, slot_probabilities
from .trajectory import (
    MixedChannelSpec,
    TrajectoryRecord,
    classical_prediction,
    mixed_unitary_distribution,
    repeated_measurement_run,
    trajectory_agreement,
)

__all__ = [
    "HBAR", "HBAR_SI", "CoherentStateParams", "Grid", "HamiltonianSpec", "NumericalGuardError",
    "SlotDistribution", "SlotPartition", "UnitScale", "WaveFunction", "coherent_state", "slot_index",
    "drift_rate", "ehrenfest_lower_bound", "scenario_table", "textbook_free_ehrenfest",
    "discrete_characteristics", "pushforward_evolve", "semi_lagrangian_evolve", "total_variation",
    "build_povm_element", "projectivity_error_closed_form", "projectivity_error_numeric",
    "PropagatorConfig", "evolve", "measure_collapse", "slot_probabilities",
    "MixedChannelSpec", "TrajectoryRecord", "classical_prediction", "mixed_unitary_distribution",
    "repeated_measurement_run", "trajectory_agreement", "__version__",
]
