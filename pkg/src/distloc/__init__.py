"""Decentralized target tracking and sensor self-localization."""
from .model import (MotionModel, ObservationModel, SingularGeometryError, build_cv_model,
                    build_scalar_model, bearings_observation, linear_position_observation,
                    observe, simulate_target)
from .network import LocalizationParams, Topology, build_topology, graph_diameter, truth_from_positions
from .messaging import aggregate, init_messages, run_rounds
from .filtering import DistributedFilter, FilterAbort
from .estimation import EmEstimator, RmlEstimator, StepSchedule, step_size

__version__ = "0.1.0"
