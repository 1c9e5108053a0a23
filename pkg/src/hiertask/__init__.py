"""hiertask: an agent that learns a hierarchy of control tasks from its own
exploration and from occasional demonstrations.

The learner alternates between sampling goals it judges promising, executing
either raw motor commands, replayed outcomes, outcome sequences, or noisy
copies of demonstrations, and feeding every result -- success or failure --
back into episodic memory, a task-dependency graph, and (for the sensorimotor
variant) a registry of learned input/output couplings.
"""

from hiertask.core import (
    ActionPrimitive,
    CompoundAction,
    Controllable,
    DomainError,
    EpisodeRecord,
    HierarchyGraph,
    Outcome,
    OutcomeSpace,
    PRIMITIVE_NODE,
    Procedure,
    concat,
)
from hiertask.config import ExperimentConfig, load_config
from hiertask.memory import EpisodicMemory

__all__ = [
    "ActionPrimitive",
    "CompoundAction",
    "Controllable",
    "DomainError",
    "EpisodeRecord",
    "EpisodicMemory",
    "ExperimentConfig",
    "HierarchyGraph",
    "Outcome",
    "OutcomeSpace",
    "PRIMITIVE_NODE",
    "Procedure",
    "concat",
    "load_config",
]

__version__ = "0.1.0"
