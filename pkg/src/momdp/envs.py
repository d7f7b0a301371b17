"""Constructors for named POMDP families and random generators.

State and observation index conventions for the combination lock:
state 0 is the good state, state 1 the bad one; observation 0 is ``o_g``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .pomdp import TabularPOMDP, check_valid
from .spectral import numerical_rank, pairwise_l1, tensor_power

FAMILIES = ("combination_lock", "vandermonde", "random_distinguishable", "random_revealing")


class GeneratorBudgetError(RuntimeError):
    """Rejection sampling ran out of attempts."""


def lock_good_actions(H: int, A: int, seed=0) -> np.ndarray:
    """Good action for each of the first ``H - 1`` steps, drawn from ``seed``."""
    return np.random.default_rng(seed).integers(0, A, size=H - 1)


def make_combination_lock(H: int, A: int, seed=0,
                          good_actions: Optional[Sequence[int]] = None) -> TabularPOMDP:
    """Two-state lock whose first ``H - 1`` observations carry no information.

    Staying in the good state requires the good action at every step
    ``h < H``; any other action, or any action from the bad state, leads to
    the bad state. Only ``o_g`` at the last step is rewarded.
    """
    if H < 2 or A < 2:
        raise ValueError("the combination lock needs H >= 2 and A >= 2")
    good = (lock_good_actions(H, A, seed) if good_actions is None
            else np.asarray(good_actions, dtype=int))
    if good.shape != (H - 1,) or good.min() < 0 or good.max() >= A:
        raise ValueError(f"good_actions must be {H - 1} actions in [0, {A})")
    T = np.zeros((H, 2, A, 2))
    T[:, :, :, 1] = 1.0
    for h, a in enumerate(good):
        T[h, 0, a] = (1.0, 0.0)
    T[H - 1] = np.eye(2)[:, None, :]
    E = np.full((H, 2, 2), 0.5)
    E[H - 1] = np.eye(2)
    r = np.zeros((H, 2))
    r[H - 1, 0] = 1.0
    return TabularPOMDP(d0=np.array([1.0, 0.0]), transitions=T, emissions=E, rewards=r)


def make_vandermonde_family(k: int, v_values: Sequence[float]) -> TabularPOMDP:
    """Single-step model with ``k + 2`` Bernoulli emission columns ``(1 - v_i, v_i)``.

    ``O^{(x)k}`` has rank ``k + 1`` while ``O^{(x)(k+1)}`` has full rank ``k + 2``.
    Rewards are ``r(o_1) = 0`` and ``r(o_2) = 1``.
    """
    v = np.asarray(v_values, dtype=float)
    if k < 1:
        raise ValueError("k must be positive")
    if v.shape != (k + 2,):
        raise ValueError(f"need exactly k + 2 = {k + 2} values, got {v.size}")
    if np.any(v <= 0) or np.any(v >= 1):
        raise ValueError("v values must lie strictly inside (0, 1)")
    if len(np.unique(v)) != v.size:
        raise ValueError("v values must be pairwise distinct")
    S = k + 2
    E = np.stack([1 - v, v], axis=1)[None]
    return TabularPOMDP(d0=np.full(S, 1.0 / S), transitions=np.eye(S)[None, :, None, :],
                        emissions=E, rewards=np.array([[0.0, 1.0]]))


def _random_dynamics(rng, S, A, H, concentration):
    d0 = rng.dirichlet(np.full(S, concentration))
    T = rng.dirichlet(np.full(S, concentration), size=(H, S, A))
    return d0, T


def make_random_distinguishable(S: int, A: int, O: int, H: int, alpha_target: float, seed=0,
                                max_attempts: int = 10_000, concentration: float = 1.0,
                                rewards: Optional[np.ndarray] = None):
    """Dirichlet model whose emission columns are pairwise ``alpha_target``-far in l1.

    Each step's emission matrix is rejection-sampled independently.

    Returns
    -------
    model : TabularPOMDP
    alpha : float
        Realized distinguishability, at least ``alpha_target``.
    """
    if O < 2:
        raise ValueError("need at least two observations")
    if not 0 <= alpha_target <= 2:
        raise ValueError("alpha_target must lie in [0, 2]")
    rng = np.random.default_rng(seed)
    d0, T = _random_dynamics(rng, S, A, H, concentration)
    E = np.empty((H, S, O))
    realized = np.inf
    for h in range(H):
        for _ in range(max_attempts):
            cols = rng.dirichlet(np.full(O, concentration), size=S)
            a = pairwise_l1(cols.T)[0] if S > 1 else 2.0
            if a >= alpha_target:
                E[h] = cols
                realized = min(realized, a)
                break
        else:
            raise GeneratorBudgetError(
                f"no emission matrix at step {h} with {S} columns pairwise "
                f"{alpha_target}-far in l1 over {O} symbols after {max_attempts} attempts")
    r = rng.random((H, O)) if rewards is None else np.asarray(rewards, dtype=float)
    return TabularPOMDP(d0=d0, transitions=T, emissions=E, rewards=r), float(realized)


def make_random_revealing(S: int, A: int, O: int, H: int, k: int = 1, seed=0,
                          max_attempts: int = 1000, concentration: float = 1.0) -> TabularPOMDP:
    """Dirichlet model whose ``k``-fold tensor-power emissions have full column rank."""
    rng = np.random.default_rng(seed)
    d0, T = _random_dynamics(rng, S, A, H, concentration)
    E = np.empty((H, S, O))
    for h in range(H):
        for _ in range(max_attempts):
            cols = rng.dirichlet(np.full(O, concentration), size=S)
            if numerical_rank(tensor_power(cols.T, k)) == S:
                E[h] = cols
                break
        else:
            raise GeneratorBudgetError(f"no rank-{S} emission at step {h} for k={k}")
    return TabularPOMDP(d0=d0, transitions=T, emissions=E, rewards=rng.random((H, O)))


@dataclass
class EnvRecipe:
    """Serializable description of how a model was built."""

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")

    def build(self) -> TabularPOMDP:
        p = dict(self.params)
        if self.family == "combination_lock":
            model = make_combination_lock(p["H"], p["A"], p.get("seed", 0), p.get("good_actions"))
        elif self.family == "vandermonde":
            model = make_vandermonde_family(p["k"], p["v"])
        elif self.family == "random_distinguishable":
            model, _ = make_random_distinguishable(
                p["S"], p["A"], p["O"], p["H"], p["alpha"], p.get("seed", 0),
                p.get("max_attempts", 10_000), p.get("concentration", 1.0))
        else:
            model = make_random_revealing(p["S"], p["A"], p["O"], p["H"], p.get("k", 1),
                                          p.get("seed", 0))
        check_valid(model)
        return model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvRecipe":
        return cls(family=doc["family"], params=dict(doc.get("params", {})))
