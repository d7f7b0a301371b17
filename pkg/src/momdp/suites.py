"""Standard environments and model classes used by experiments and demos."""
from __future__ import annotations

import itertools

import numpy as np

from .envs import make_combination_lock, make_random_distinguishable
from .komle import ModelClass, default_beta
from .pomdp import TabularPOMDP

STANDARD_DISTINGUISHABLE = dict(S=3, A=2, O=2, H=2, alpha=0.5)


def distinguishable_env(seed: int, S=3, A=2, O=2, H=2, alpha=0.5):
    """Random ``alpha``-distinguishable environment of the standard suite."""
    return make_random_distinguishable(S, A, O, H, alpha, seed=seed)


def standard_ost_env(seed: int = 0) -> TabularPOMDP:
    p = STANDARD_DISTINGUISHABLE
    return distinguishable_env(seed, p["S"], p["A"], p["O"], p["H"], p["alpha"])[0]


# --------------------------------------------------------------------------
# Revealing class around a well-conditioned two-state model
# --------------------------------------------------------------------------

def _two_state_model(step1, emission=0.85, d0=(0.5, 0.5)):
    """``step1[s][a]`` is the probability of reaching state 0 at step 2."""
    T = np.zeros((2, 2, 2, 2))
    for s in range(2):
        for a in range(2):
            T[0, s, a] = (step1[s][a], 1 - step1[s][a])
    T[1] = np.eye(2)[:, None, :]
    e = emission
    E = np.array([[[e, 1 - e], [1 - e, e]]] * 2)
    r = np.array([[0.0, 0.0], [1.0, 0.0]])
    return TabularPOMDP(np.array(d0), T, E, r)


def revealing_class(T: int = 300, delta: float = 0.1) -> tuple:
    """``(theta_star, ModelClass)`` with three optimistic wrong candidates first.

    Each wrong candidate promises a higher optimal value through a different
    step-1 transition and prefers a different policy than the truth.
    """
    truth = _two_state_model([[0.8, 0.3], [0.3, 0.8]])
    wrong = [
        _two_state_model([[0.8, 0.95], [0.3, 0.8]]),
        _two_state_model([[0.8, 0.3], [0.95, 0.8]]),
        _two_state_model([[0.3, 0.9], [0.9, 0.3]]),
    ]
    cands = wrong + [truth]
    return truth, ModelClass(cands, default_beta(len(cands), T, delta), true_index=len(cands) - 1)


# --------------------------------------------------------------------------
# Combination-lock class
# --------------------------------------------------------------------------

def lock_class(H: int, A: int, true_actions, T: int = 1, delta: float = 0.1) -> ModelClass:
    """Every lock of horizon ``H`` in lexicographic order of its good actions."""
    combos = list(itertools.product(range(A), repeat=H - 1))
    cands = [make_combination_lock(H, A, good_actions=c) for c in combos]
    true_index = combos.index(tuple(int(a) for a in true_actions))
    return ModelClass(cands, default_beta(len(cands), max(T, 1), delta), true_index)


# --------------------------------------------------------------------------
# Vandermonde decision problem
# --------------------------------------------------------------------------

VANDERMONDE_V = (0.1, 0.35, 0.6, 0.85)


def vandermonde_decision_model(win_action_by_state, win_emission=0.8, v=VANDERMONDE_V,
                               d0=None) -> TabularPOMDP:
    """Two-step model whose step-1 emissions are a Vandermonde family.

    At step 1 the latent state ``s`` emits ``Bernoulli(v_s)``; action
    ``win_action_by_state[s]`` moves to the win state (index 0), any other
    action to the lose state (index 1). Step 2 rewards observation 1, which
    the win state emits with probability ``win_emission``.
    """
    v = np.asarray(v, dtype=float)
    S = len(v)
    T = np.zeros((2, S, 2, S))
    for s in range(S):
        for a in range(2):
            T[0, s, a, 0 if a == win_action_by_state[s] else 1] = 1.0
    T[1] = np.eye(S)[:, None, :]
    E = np.zeros((2, S, 2))
    E[0] = np.stack([1 - v, v], axis=1)
    step2 = np.array([win_emission, 1 - win_emission] + list(np.linspace(0.3, 0.6, S - 2)))
    E[1] = np.stack([1 - step2, step2], axis=1)
    r = np.array([[0.0, 0.0], [0.0, 1.0]])
    d0 = np.full(S, 1.0 / S) if d0 is None else np.asarray(d0)
    return TabularPOMDP(d0, T, E, r)


def vandermonde_class(T: int = 80, delta: float = 0.1) -> tuple:
    """``(theta_star, ModelClass)`` for the Vandermonde decision problem.

    The truth rewards action 0 on the two low-``v`` states and action 1 on
    the high ones, so the first observation is informative. Wrong
    candidates change that mapping and claim a slightly more reliable win
    signal, so optimism tries them first.
    """
    truth = vandermonde_decision_model((0, 0, 1, 1))
    wrong_maps = [(1, 1, 0, 0), (0, 1, 1, 1), (0, 0, 0, 1)]
    wrong = [vandermonde_decision_model(m, win_emission=0.85) for m in wrong_maps]
    cands = wrong + [truth]
    return truth, ModelClass(cands, default_beta(len(cands), T, delta), true_index=len(cands) - 1)
