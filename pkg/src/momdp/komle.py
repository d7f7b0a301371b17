"""Optimistic maximum likelihood over an explicit finite model class."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .planner import pop_exact
from .pomdp import (DEFAULT_MAX_NODES, HistoryPolicy, PlanResult, SwitchPolicy, TabularPOMDP,
                    check_valid, evaluate_policy, require_single_obs, simulate_episode,
                    trajectory_log_likelihood)


@dataclass
class ModelClass:
    """Finite candidate list sharing ``(S, A, O, H)``.

    ``true_index`` is oracle metadata for experiments and is never read by
    the learner.
    """

    candidates: list
    beta: float
    true_index: Optional[int] = None

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("the model class is empty")
        dims = {m.dims for m in self.candidates}
        if len(dims) != 1:
            raise ValueError(f"candidates disagree on (S, A, O, H): {sorted(dims)}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    def __len__(self):
        return len(self.candidates)

    @property
    def dims(self):
        return self.candidates[0].dims


@dataclass
class ConfidenceSet:
    members: np.ndarray
    log_likelihood: np.ndarray

    def __len__(self):
        return len(self.members)

    def __contains__(self, index) -> bool:
        return int(index) in set(self.members.tolist())


def default_beta(num_candidates: int, T: int, delta: float) -> float:
    """``log(|Theta| T / delta)``."""
    return math.log(num_candidates * T / delta)


def exploration_policies(policy: HistoryPolicy, H: int) -> list:
    """Policy ``h`` (1-based) follows ``policy`` before step ``h`` and is uniform from ``h`` on."""
    return [SwitchPolicy(policy, h) for h in range(1, H + 1)]


def dataset_log_likelihoods(candidates: Sequence[TabularPOMDP], dataset) -> np.ndarray:
    """Total log-likelihood of ``dataset`` (pairs of policy and trajectory) per candidate."""
    return np.array([sum(trajectory_log_likelihood(m, pi, tau) for pi, tau in dataset)
                     for m in candidates], dtype=float)


def confidence_set_from_scores(scores: np.ndarray, beta: float) -> ConfidenceSet:
    best = scores.max()
    if not np.isfinite(best):
        raise ValueError("the dataset has zero probability under every candidate")
    return ConfidenceSet(np.nonzero(scores >= best - beta)[0], scores.copy())


def update_confidence_set(candidates: Sequence[TabularPOMDP], dataset, beta: float) -> ConfidenceSet:
    """Candidates whose total log-likelihood is within ``beta`` of the best."""
    return confidence_set_from_scores(dataset_log_likelihoods(candidates, dataset), beta)


class PlanCache:
    """Optimal plans of candidates, computed on first use."""

    def __init__(self, candidates, max_nodes: int = DEFAULT_MAX_NODES):
        self.candidates = candidates
        self.max_nodes = max_nodes
        self._plans: dict = {}

    def __getitem__(self, index: int) -> PlanResult:
        if index not in self._plans:
            self._plans[index] = pop_exact(self.candidates[index], self.max_nodes)
        return self._plans[index]


def optimistic_select(candidates, confidence_set: ConfidenceSet, plans: Optional[PlanCache] = None):
    """Candidate with the highest optimal value; ties go to the lowest index.

    Returns ``(index, PlanResult)``.
    """
    if len(confidence_set) == 0:
        raise ValueError("empty confidence set")
    plans = plans or PlanCache(candidates)
    best_i, best = None, -math.inf
    for i in sorted(confidence_set.members.tolist()):
        v = plans[i].value
        if v > best + 1e-12:
            best_i, best = i, v
    return best_i, plans[best_i]


@dataclass
class KomleResult:
    final_policy: HistoryPolicy
    selected: np.ndarray
    optimistic_values: np.ndarray
    values: np.ndarray
    confset_sizes: np.ndarray
    retained: np.ndarray
    optimism_ok: np.ndarray
    optimal_value: float
    k: int
    horizon: int
    log: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.values)

    @property
    def dataset_size(self) -> int:
        return self.iterations * self.horizon

    @property
    def samples(self) -> int:
        """Observations consumed: ``T * H`` episodes of ``H`` steps with ``k`` each."""
        return self.iterations * self.horizon * self.k * self.horizon

    @property
    def final_gap(self) -> float:
        return self.optimal_value - self.values[-1]


def run_komle(env: TabularPOMDP, model_class: ModelClass, T: int, k: int, seed=0,
              max_nodes: int = DEFAULT_MAX_NODES) -> KomleResult:
    """``T`` iterations of optimistic selection and likelihood elimination.

    ``values[t]`` is the oracle value of the policy selected at the start
    of iteration ``t + 1``; the final policy is the one selected at the
    start of iteration ``T``.
    """
    check_valid(env)
    if env.dims != model_class.dims:
        raise ValueError("environment and model class have different dimensions")
    S, A, O, H = env.dims
    cands = model_class.candidates
    rng = np.random.default_rng(seed)
    plans = PlanCache(cands, max_nodes)
    optimum = pop_exact(env, max_nodes).value
    true_i = model_class.true_index
    star_value = plans[true_i].value if true_i is not None else None

    scores = np.zeros(len(cands))
    conf = ConfidenceSet(np.arange(len(cands)), scores.copy())
    selected = np.empty(T, dtype=np.int64)
    opt_values, values = np.empty(T), np.empty(T)
    sizes = np.empty(T, dtype=np.int64)
    retained = np.empty(T, dtype=bool)
    optimism = np.empty(T, dtype=bool)
    log = []
    policy = None
    for t in range(T):
        i, plan = optimistic_select(cands, conf, plans)
        policy = require_single_obs(plan.policy)
        selected[t], opt_values[t] = i, plan.value
        values[t] = evaluate_policy(env, policy, max_nodes)
        if true_i is not None:
            optimism[t] = (true_i not in conf) or plan.value >= star_value - 1e-12
        else:
            optimism[t] = True
        for pi in exploration_policies(policy, H):
            traj = simulate_episode(env, pi, k, rng, check=False)
            scores += [trajectory_log_likelihood(m, pi, traj) for m in cands]
        conf = confidence_set_from_scores(scores, model_class.beta)
        sizes[t] = len(conf)
        retained[t] = true_i is None or true_i in conf
        log.append({"iteration": t + 1, "selected": int(i), "optimistic_value": plan.value,
                    "value": values[t], "confset_size": int(sizes[t]),
                    "true_retained": bool(retained[t])})
    return KomleResult(policy, selected, opt_values, values, sizes, retained, optimism,
                       optimum, k, H, log)
