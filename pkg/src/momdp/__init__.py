"""Tabular POMDP learning under k-observation hindsight feedback."""
from .pomdp import (HistoryPolicy, KObsTrajectory, OpenLoopPolicy, PlanResult, SwitchPolicy,
                    TabularPOMDP, TabularPolicy, UniformPolicy, evaluate_policy,
                    simulate_episode, trajectory_log_likelihood, validate)

__version__ = "0.1.0"

__all__ = ["HistoryPolicy", "KObsTrajectory", "OpenLoopPolicy", "PlanResult", "SwitchPolicy",
           "TabularPOMDP", "TabularPolicy", "UniformPolicy", "evaluate_policy",
           "simulate_episode", "trajectory_log_likelihood", "validate"]
