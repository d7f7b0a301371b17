"""Tabular POMDPs, k-observation episodes, likelihoods and exact policy values.

Array conventions used throughout the package (``h`` is 0-based):

* ``d0[s]`` initial state distribution, shape ``(S,)``
* ``transitions[h, s, a, s']`` next-state law, shape ``(H, S, A, S)``
* ``emissions[h, s, o]`` observation law of state ``s``, shape ``(H, S, O)``
* ``rewards[h, o]`` observation reward in ``[0, 1]``, shape ``(H, O)``

The column-stochastic ``O x S`` emission matrix of step ``h`` is
``model.emission_matrix(h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

PROB_TOL = 1e-9
DEFAULT_MAX_NODES = 10**7


class InvalidModelError(ValueError):
    """Raised when a model violates its stochasticity or range invariants."""


class TreeTooLargeError(ValueError):
    """Raised when an exact history-tree computation exceeds its node cap."""


def _readonly(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularPOMDP:
    """Finite-horizon tabular POMDP with observation-dependent rewards."""

    d0: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        d0 = _readonly(self.d0)
        T = _readonly(self.transitions)
        E = _readonly(self.emissions)
        r = _readonly(self.rewards)
        if d0.ndim != 1:
            raise ValueError("d0 must be a vector")
        if E.ndim != 3:
            raise ValueError("emissions must have shape (H, S, O)")
        H, S, O = E.shape
        if d0.shape != (S,):
            raise ValueError(f"d0 has shape {d0.shape}, expected ({S},)")
        if T.ndim != 4 or T.shape[0] != H or T.shape[1] != S or T.shape[3] != S:
            raise ValueError(f"transitions has shape {T.shape}, expected ({H}, {S}, A, {S})")
        if r.shape != (H, O):
            raise ValueError(f"rewards has shape {r.shape}, expected ({H}, {O})")
        if H < 1 or S < 1 or O < 1 or T.shape[2] < 1:
            raise ValueError("all dimensions must be positive")
        object.__setattr__(self, "d0", d0)
        object.__setattr__(self, "transitions", T)
        object.__setattr__(self, "emissions", E)
        object.__setattr__(self, "rewards", r)

    @property
    def num_states(self) -> int:
        return self.emissions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    @property
    def num_observations(self) -> int:
        return self.emissions.shape[2]

    @property
    def horizon(self) -> int:
        return self.emissions.shape[0]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(S, A, O, H)``."""
        return self.num_states, self.num_actions, self.num_observations, self.horizon

    def emission_matrix(self, h: int) -> np.ndarray:
        """Column-stochastic ``O x S`` emission matrix of step ``h``."""
        return self.emissions[h].T

    def latent_rewards(self) -> np.ndarray:
        """Expected reward of each ``(h, s, a)``, shape ``(H, S, A)``.

        Since ``o_h ~ E_h(.|s_h)`` whatever the policy does, the expected
        observation reward of a state is exact for value computations.
        """
        per_state = np.einsum("hso,ho->hs", self.emissions, self.rewards)
        return np.repeat(per_state[:, :, None], self.num_actions, axis=2)

    def replace(self, **changes) -> "TabularPOMDP":
        fields = dict(d0=self.d0, transitions=self.transitions,
                      emissions=self.emissions, rewards=self.rewards)
        fields.update(changes)
        return TabularPOMDP(**fields)


def _row_defects(name: str, rows: np.ndarray, index_names: Sequence[str], tol: float) -> list[str]:
    out = []
    sums = rows.sum(axis=-1)
    neg = (rows < -tol).any(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    for idx in zip(*np.nonzero(bad | neg)):
        where = ", ".join(f"{n}={i}" for n, i in zip(index_names, idx))
        row = rows[idx]
        if (row < -tol).any():
            out.append(f"{name}[{where}] has a negative entry {row.min():.6g}")
        if abs(row.sum() - 1.0) > tol:
            out.append(f"{name}[{where}] sums to {row.sum():.12g}, not 1")
    return out


def validate(model: TabularPOMDP, tol: float = PROB_TOL) -> list[str]:
    """List every invariant violation of ``model``; empty iff it is valid."""
    problems = []
    problems += _row_defects("d0", model.d0[None, :], ["row"], tol)
    problems += _row_defects("transitions", model.transitions, ["h", "s", "a"], tol)
    problems += _row_defects("emissions", model.emissions, ["h", "s"], tol)
    for h, o in zip(*np.nonzero((model.rewards < -tol) | (model.rewards > 1 + tol))):
        problems.append(f"rewards[h={h}, o={o}] = {model.rewards[h, o]:.6g} outside [0, 1]")
    for name in ("d0", "transitions", "emissions", "rewards"):
        if not np.all(np.isfinite(getattr(model, name))):
            problems.append(f"{name} contains non-finite values")
    return problems


def check_valid(model: TabularPOMDP) -> None:
    problems = validate(model)
    if problems:
        raise InvalidModelError("; ".join(problems[:5]))


# --------------------------------------------------------------------------
# Policies over first-slot histories
# --------------------------------------------------------------------------

class HistoryPolicy:
    """Maps a first-slot history ``(o_1, a_1, ..., o_h)`` to action probabilities.

    Histories are tuples of ints of odd length ``2h - 1``; the 0-based step
    of a history is ``len(history) // 2``.
    """

    #: Policies built by the learners read only the in-episode observation.
    first_slot_only = True

    def __init__(self, num_actions: int):
        self.num_actions = int(num_actions)

    def action_probs(self, history: tuple) -> np.ndarray:
        raise NotImplementedError

    def sample(self, history: tuple, rng: np.random.Generator) -> int:
        p = self.action_probs(history)
        if p.max() >= 1.0:
            return int(np.argmax(p))
        return int(sample_categorical(rng, p))


class UniformPolicy(HistoryPolicy):
    def action_probs(self, history):
        return np.full(self.num_actions, 1.0 / self.num_actions)


class OpenLoopPolicy(HistoryPolicy):
    """Plays a fixed action sequence regardless of observations."""

    def __init__(self, actions: Sequence[int], num_actions: int):
        super().__init__(num_actions)
        self.actions = tuple(int(a) for a in actions)

    def action_probs(self, history):
        p = np.zeros(self.num_actions)
        h = len(history) // 2
        p[self.actions[min(h, len(self.actions) - 1)]] = 1.0
        return p


class TabularPolicy(HistoryPolicy):
    """Explicit decision tree: a dict from histories to action distributions.

    Histories missing from the table fall back to ``default`` (uniform when
    not given).
    """

    def __init__(self, num_actions: int, table: dict, default: Optional[np.ndarray] = None):
        super().__init__(num_actions)
        self.table = {tuple(k): np.asarray(v, dtype=float) for k, v in table.items()}
        self.default = (np.full(num_actions, 1.0 / num_actions) if default is None
                        else np.asarray(default, dtype=float))

    def action_probs(self, history):
        return self.table.get(tuple(history), self.default)

    def greedy_actions(self) -> dict:
        return {k: int(np.argmax(v)) for k, v in self.table.items()}

    def to_json(self) -> dict:
        return {"num_actions": self.num_actions,
                "table": [{"history": list(k), "probs": v.tolist()}
                          for k, v in sorted(self.table.items())]}


class SwitchPolicy(HistoryPolicy):
    """Follows ``base`` for 1-based steps ``< switch_step``, then uniform."""

    def __init__(self, base: HistoryPolicy, switch_step: int):
        super().__init__(base.num_actions)
        self.base = base
        self.switch_step = int(switch_step)
        self.first_slot_only = base.first_slot_only

    def action_probs(self, history):
        if len(history) // 2 + 1 < self.switch_step:
            return self.base.action_probs(history)
        return np.full(self.num_actions, 1.0 / self.num_actions)


def require_single_obs(policy: HistoryPolicy) -> HistoryPolicy:
    if not getattr(policy, "first_slot_only", True):
        raise ValueError("learners only accept policies that read the first observation slot")
    return policy


@dataclass
class PlanResult:
    policy: HistoryPolicy
    value: float


# --------------------------------------------------------------------------
# Episodes
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KObsTrajectory:
    """One episode under k-observation feedback.

    ``observations[h, 0]`` is the in-episode observation; columns ``1:k``
    arrive after the episode. ``hidden_states`` is filled in oracle mode only.
    """

    k: int
    actions: np.ndarray
    observations: np.ndarray
    hidden_states: Optional[np.ndarray] = None

    def __post_init__(self):
        obs = np.asarray(self.observations)
        acts = np.asarray(self.actions)
        if obs.ndim != 2 or obs.shape[1] != self.k:
            raise ValueError(f"observation blocks must have length k={self.k}")
        if acts.shape != (obs.shape[0],):
            raise ValueError("need exactly one action per step")

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def first_observations(self) -> np.ndarray:
        return self.observations[:, 0]

    def history(self, h: int) -> tuple:
        """First-slot history up to and including ``o_h`` (0-based ``h``)."""
        out = []
        for i in range(h):
            out += [int(self.observations[i, 0]), int(self.actions[i])]
        out.append(int(self.observations[h, 0]))
        return tuple(out)


def sample_categorical(rng: np.random.Generator, p: np.ndarray, size=None):
    """Inverse-CDF draws from a probability vector."""
    cdf = np.cumsum(p)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, len(p) - 1)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_episode(model: TabularPOMDP, policy: HistoryPolicy, k: int, rng_seed=None,
                     oracle: bool = False, check: bool = True) -> KObsTrajectory:
    """Play one episode with ``policy`` and collect ``k`` observations per step.

    The first observation of each step is emitted during play; the other
    ``k - 1`` are drawn i.i.d. from the same latent state after the episode.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if check:
        check_valid(model)
    rng = as_generator(rng_seed)
    S, A, O, H = model.dims
    states = np.empty(H, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    obs = np.empty((H, k), dtype=np.int64)
    s = int(sample_categorical(rng, model.d0))
    history: tuple = ()
    for h in range(H):
        states[h] = s
        o = int(sample_categorical(rng, model.emissions[h, s]))
        obs[h, 0] = o
        history = history + (o,)
        a = policy.sample(history, rng)
        actions[h] = a
        history = history + (a,)
        if h < H - 1:
            s = int(sample_categorical(rng, model.transitions[h, s, a]))
    if k > 1:
        for h in range(H):
            obs[h, 1:] = sample_categorical(rng, model.emissions[h, states[h]], k - 1)
    return KObsTrajectory(k=k, actions=actions, observations=obs,
                          hidden_states=states if oracle else None)


# --------------------------------------------------------------------------
# Likelihoods
# --------------------------------------------------------------------------

def block_log_emission(model, h: int, block: np.ndarray) -> np.ndarray:
    """``log prod_i E_h(o_i | s)`` for every state, shape ``(S,)``."""
    counts = np.bincount(np.asarray(block), minlength=model.num_observations)
    with np.errstate(divide="ignore"):
        logE = np.log(model.emissions[h])
    nz = counts > 0
    return (logE[:, nz] * counts[nz]).sum(axis=1)


def trajectory_log_likelihood(model: TabularPOMDP, policy: Optional[HistoryPolicy],
                              traj: KObsTrajectory) -> float:
    """``log P_theta^pi(tau_k)`` by a scaled forward recursion.

    The per-step emission weight is the k-fold product of the block's
    emission probabilities. Policy factors are included when ``policy`` is
    given; they do not depend on the model.
    """
    S, A, O, H = model.dims
    if traj.horizon != H:
        raise ValueError("trajectory horizon does not match the model")
    if traj.observations.max(initial=0) >= O or traj.actions.max(initial=0) >= A:
        raise ValueError("trajectory indices out of range for the model")
    total = 0.0
    f = model.d0.copy()
    for h in range(H):
        logw = block_log_emission(model, h, traj.observations[h])
        shift = logw.max()
        if not np.isfinite(shift):
            return -math.inf
        f = f * np.exp(logw - shift)
        mass = f.sum()
        if mass <= 0.0:
            return -math.inf
        total += math.log(mass) + shift
        f = f / mass
        a = int(traj.actions[h])
        if policy is not None:
            pa = float(policy.action_probs(traj.history(h))[a])
            if pa <= 0.0:
                return -math.inf
            total += math.log(pa)
        if h < H - 1:
            f = f @ model.transitions[h, :, a, :]
    return total


# --------------------------------------------------------------------------
# Exact policy evaluation
# --------------------------------------------------------------------------

def history_tree_size(model) -> int:
    return (model.num_actions * model.num_observations) ** model.horizon


def evaluate_policy(model, policy: HistoryPolicy, max_nodes: int = DEFAULT_MAX_NODES) -> float:
    """Exact expected total reward of ``policy`` by enumerating histories.

    Works for any model exposing ``d0``, ``transitions``, ``emissions`` and
    ``latent_rewards()``, including latent-reward planning models.
    """
    if history_tree_size(model) > max_nodes:
        raise TreeTooLargeError(
            f"history tree has {history_tree_size(model)} nodes, cap is {max_nodes}")
    H = model.horizon
    T, E = model.transitions, model.emissions
    R = model.latent_rewards()

    def visit(h: int, f: np.ndarray, history: tuple) -> float:
        joint = f[:, None] * E[h]
        mass = joint.sum(axis=0)
        value = 0.0
        for o in np.nonzero(mass > 0)[0]:
            g = joint[:, o]
            key = history + (int(o),)
            probs = policy.action_probs(key)
            for a in np.nonzero(probs)[0]:
                w = g * probs[a]
                value += w @ R[h, :, a]
                if h < H - 1:
                    value += visit(h + 1, w @ T[h, :, a, :], key + (int(a),))
        return value

    return float(visit(0, np.asarray(model.d0, dtype=float), ()))
