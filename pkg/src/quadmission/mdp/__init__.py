"""Guarded-command MDP models, explicit-state construction and model checking."""
from .explicit import Mdp, build_mdp
from .model import GuardedCommandModel, ModelError
from .prism import MISSION_PROPERTIES, PrismError, export_prism, parse_prism, properties_text
from .scenario import AbstractScenario, ScenarioError, build_abstract_mdp, scenario_model, scenario_text
from .solver import ConvergenceError, check_property, expected_reward, reach_probability

__all__ = [
    "AbstractScenario", "ConvergenceError", "GuardedCommandModel", "Mdp", "ModelError",
    "MISSION_PROPERTIES", "PrismError", "ScenarioError", "build_abstract_mdp", "build_mdp",
    "check_property", "expected_reward", "export_prism", "parse_prism", "properties_text",
    "reach_probability", "scenario_model", "scenario_text",
]
