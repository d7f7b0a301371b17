"""Independent brute-force references used by the tests."""
import itertools

import numpy as np



def brute_force_log_likelihood(model, policy, traj):
    """Sum over every latent state sequence of the joint probability."""
    S, A, O, H = model.dims
    total = 0.0
    for states in itertools.product(range(S), repeat=H):
        p = model.d0[states[0]]
        for h, s in enumerate(states):
            for o in traj.observations[h]:
                p *= model.emissions[h, s, o]
            if h < H - 1:
                p *= model.transitions[h, s, traj.actions[h], states[h + 1]]
        total += p
    if policy is not None:
        for h in range(H):
            total *= policy.action_probs(traj.history(h))[traj.actions[h]]
    return np.log(total) if total > 0 else -np.inf


def all_histories(A, O, H):
    """First-slot histories ending in an observation, for steps 1..H."""
    out = []
    for h in range(H):
        for obs in itertools.product(range(O), repeat=h + 1):
            for acts in itertools.product(range(A), repeat=h):
                hist = []
                for i in range(h):
                    hist += [obs[i], acts[i]]
                out.append(tuple(hist + [obs[h]]))
    return out


def num_deterministic_policies(A, O, H):
    return A ** len(all_histories(A, O, H))


def enumerated_value(model, action_of):
    """Expected total reward of a deterministic policy by summing every latent and observation path.

    ``action_of`` maps a first-slot history ``(o1, a1, ..., oh)`` to an action.
    """
    S, A, O, H = model.dims
    total = 0.0
    for states in itertools.product(range(S), repeat=H):
        for obs in itertools.product(range(O), repeat=H):
            p = model.d0[states[0]]
            reward = 0.0
            hist = []
            for h in range(H):
                p *= model.emissions[h, states[h], obs[h]]
                reward += model.rewards[h, obs[h]]
                hist.append(obs[h])
                if h < H - 1:
                    a = action_of[tuple(hist)]
                    p *= model.transitions[h, states[h], a, states[h + 1]]
                    hist.append(a)
                if p == 0:
                    break
            total += p * reward
    return total


def best_deterministic_value(model, cap=10**5):
    """Maximum of ``enumerated_value`` over every deterministic history policy."""
    S, A, O, H = model.dims
    hists = all_histories(A, O, H)
    if A ** len(hists) > cap:
        raise ValueError("too many policies to enumerate")
    best = -np.inf
    for choice in itertools.product(range(A), repeat=len(hists)):
        best = max(best, enumerated_value(model, dict(zip(hists, choice))))
    return best
