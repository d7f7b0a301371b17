"""Exact and heuristic planners for POMDPs with latent-state rewards."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pomdp import (DEFAULT_MAX_NODES, PlanResult, TabularPolicy, TreeTooLargeError,
                    evaluate_policy)

BELIEF_QUANTUM = 1e-9
TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LatentRewardPOMDP:
    """Dynamics and emissions with reward ``rewards[h, s, a]`` in ``[0, r_max]``."""

    d0: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    rewards: np.ndarray
    r_max: float = 1.0

    def __post_init__(self):
        H, S, O = np.shape(self.emissions)
        A = np.shape(self.transitions)[2]
        if np.shape(self.rewards) != (H, S, A):
            raise ValueError(f"rewards must have shape {(H, S, A)}, got {np.shape(self.rewards)}")
        r = np.asarray(self.rewards, dtype=float)
        if r.min(initial=0.0) < -1e-12 or r.max(initial=0.0) > self.r_max + 1e-12:
            raise ValueError(f"rewards must lie in [0, {self.r_max}]")

    @classmethod
    def from_observation_rewards(cls, model) -> "LatentRewardPOMDP":
        """Latent rewards ``sum_o E_h(o|s) r_h(o)`` of a :class:`TabularPOMDP`."""
        return cls(model.d0, model.transitions, model.emissions, model.latent_rewards(),
                   r_max=1.0)

    @property
    def horizon(self) -> int:
        return np.shape(self.emissions)[0]

    @property
    def num_states(self) -> int:
        return np.shape(self.emissions)[1]

    @property
    def num_observations(self) -> int:
        return np.shape(self.emissions)[2]

    @property
    def num_actions(self) -> int:
        return np.shape(self.transitions)[2]

    @property
    def dims(self):
        return self.num_states, self.num_actions, self.num_observations, self.horizon

    def latent_rewards(self) -> np.ndarray:
        return np.asarray(self.rewards, dtype=float)


def as_planning_model(model) -> LatentRewardPOMDP:
    if isinstance(model, LatentRewardPOMDP):
        return model
    return LatentRewardPOMDP.from_observation_rewards(model)


def _key(h: int, b: np.ndarray) -> tuple:
    return (h,) + tuple(np.rint(b / BELIEF_QUANTUM).astype(np.int64).tolist())


class _BeliefTree:
    """Memoized backward induction over normalized beliefs."""

    def __init__(self, model: LatentRewardPOMDP):
        self.H = model.horizon
        self.T = np.asarray(model.transitions, dtype=float)
        self.E = np.asarray(model.emissions, dtype=float)
        self.R = model.latent_rewards()
        self.memo_pre: dict = {}
        self.memo_q: dict = {}

    def value_before_obs(self, h: int, p: np.ndarray) -> float:
        key = _key(h, p)
        hit = self.memo_pre.get(key)
        if hit is not None:
            return hit
        joint = p[:, None] * self.E[h]
        mass = joint.sum(axis=0)
        v = 0.0
        for o in np.nonzero(mass > 0)[0]:
            v += mass[o] * self.q_values(h, joint[:, o] / mass[o]).max()
        self.memo_pre[key] = v
        return v

    def q_values(self, h: int, b: np.ndarray) -> np.ndarray:
        key = _key(h, b)
        hit = self.memo_q.get(key)
        if hit is not None:
            return hit
        q = b @ self.R[h]
        if h < self.H - 1:
            for a in range(q.size):
                q[a] += self.value_before_obs(h + 1, b @ self.T[h, :, a, :])
        self.memo_q[key] = q
        return q


def _tie_probs(q: np.ndarray) -> np.ndarray:
    best = q >= q.max() - TIE_TOL
    return best / best.sum()


def _build_table(tree: _BeliefTree, d0: np.ndarray, choose) -> dict:
    """Policy table over every first-slot history reached by the chosen actions.

    Observations with zero probability under the model keep the predictive
    belief, so the table is defined on all observation sequences.
    """
    table = {}
    E, T, H = tree.E, tree.T, tree.H

    def walk(h, p, hist):
        joint = p[:, None] * E[h]
        mass = joint.sum(axis=0)
        for o in range(E.shape[2]):
            b = joint[:, o] / mass[o] if mass[o] > 0 else p
            key = hist + (o,)
            probs = choose(h, b)
            table[key] = probs
            if h < H - 1:
                for a in np.nonzero(probs)[0]:
                    walk(h + 1, b @ T[h, :, a, :], key + (int(a),))

    walk(0, np.asarray(d0, dtype=float), ())
    return table


def _check_size(model, max_nodes):
    size = (model.num_actions * model.num_observations) ** model.horizon
    if size > max_nodes:
        raise TreeTooLargeError(
            f"history tree has (A*O)^H = {size} nodes, cap is {max_nodes}; "
            "use pop_qmdp for an approximate plan")


def pop_exact(model, max_nodes: int = DEFAULT_MAX_NODES) -> PlanResult:
    """Optimal first-slot-history policy by backward induction on beliefs.

    Ties within 1e-10 are broken by mixing uniformly over the tied actions.
    """
    model = as_planning_model(model)
    _check_size(model, max_nodes)
    tree = _BeliefTree(model)
    d0 = np.asarray(model.d0, dtype=float)
    value = tree.value_before_obs(0, d0)
    table = _build_table(tree, d0, lambda h, b: _tie_probs(tree.q_values(h, b)))
    return PlanResult(TabularPolicy(model.num_actions, table), float(value))


def qmdp_q_values(model) -> np.ndarray:
    """Fully observable ``Q[h, s, a]`` by backward value iteration."""
    model = as_planning_model(model)
    R = model.latent_rewards()
    T = np.asarray(model.transitions, dtype=float)
    Q = np.zeros_like(R)
    V_next = np.zeros(model.num_states)
    for h in range(model.horizon - 1, -1, -1):
        Q[h] = R[h] + (T[h] @ V_next if h < model.horizon - 1 else 0.0)
        V_next = Q[h].max(axis=1)
    return Q


def pop_qmdp(model, max_nodes: int = DEFAULT_MAX_NODES) -> PlanResult:
    """Heuristic plan acting greedily on belief-weighted fully observable Q-values.

    The reported value is the exact value of the produced policy.
    """
    model = as_planning_model(model)
    _check_size(model, max_nodes)
    Q = qmdp_q_values(model)
    tree = _BeliefTree(model)
    table = _build_table(tree, np.asarray(model.d0, dtype=float),
                         lambda h, b: _tie_probs(b @ Q[h]))
    policy = TabularPolicy(model.num_actions, table)
    return PlanResult(policy, evaluate_policy(model, policy, max_nodes))


def plan_to_json(result: PlanResult) -> dict:
    return {"value": result.value, "policy": result.policy.to_json()}
