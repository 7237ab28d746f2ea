"""Distributed gradient descent under growing-range stochastic quantization.

A desk-scale simulator for a network of agents minimizing a decomposable
least-squares objective by interleaving doubly stochastic averaging of
quantized iterates with local gradient steps, plus the diagnostics needed
to verify its convergence behavior.
"""

__version__ = "0.1.0"

from .algorithm import (AgentState, RoundState, averaged_output, initial_state,
                        run_experiment, run_round)
from .config import ExperimentConfig, load_config
from .diagnostics import (RateBoundInputs, Trace, TraceRecord, consensus_error,
                          gamma_k, lyapunov_value, rate_bound)
from .graph import (MixingMatrix, NetworkTopology, generate_random_connected_graph,
                    lazy_metropolis, spectral_gap)
from .objective import (RegressionObjective, generate_instance, global_value,
                        gradient, well_conditioned_instance)
from .quantizer import (QuantizedMessage, QuantizerConfig, QuantizerSchedule,
                        decode, delta_k, quantize_scalar, quantize_vector)
from .schedules import StepSchedule

__all__ = [
    "AgentState", "ExperimentConfig", "MixingMatrix", "NetworkTopology",
    "QuantizedMessage", "QuantizerConfig", "QuantizerSchedule",
    "RateBoundInputs", "RegressionObjective", "RoundState", "StepSchedule",
    "Trace", "TraceRecord", "averaged_output", "consensus_error", "decode",
    "delta_k", "gamma_k", "generate_instance",
    "generate_random_connected_graph", "global_value", "gradient",
    "initial_state", "lazy_metropolis", "load_config", "lyapunov_value",
    "quantize_scalar", "quantize_vector", "rate_bound", "run_experiment",
    "run_round", "spectral_gap", "well_conditioned_instance",
]
