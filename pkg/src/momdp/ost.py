"""Optimism with state testing: pseudo-state clustering plus count-based bonuses.

Each episode's k-observation blocks are clustered into pseudo-states by
closeness tests against stored representatives; the resulting labelled
data feed an empirical POMDP whose latent rewards are inflated by
exploration bonuses, and the exact planner picks the next policy.

All closeness tests at step ``h`` share one Poisson block partition drawn
at the start of the run, so every stored block is summarized by its
``(M, O)`` per-block counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dist_testing import (block_counts, budget_factor, closeness_votes, design_num_blocks,
                           draw_block_sizes, majority, pinned_c1)
from .planner import LatentRewardPOMDP, pop_exact
from .pomdp import (DEFAULT_MAX_NODES, HistoryPolicy, KObsTrajectory, TabularPOMDP,
                    UniformPolicy, check_valid, evaluate_policy, require_single_obs,
                    simulate_episode)
from .spectral import distinguishability

SEQUENCE_SAMPLER_MAX_K = 4096


# --------------------------------------------------------------------------
# Hyperparameters
# --------------------------------------------------------------------------

def ost_test_delta(S: int, T: int, H: int, delta: float) -> float:
    """Per-test failure budget ``delta / (2 S T H)``."""
    return delta / (2.0 * S * T * H)


def ost_k(S: int, O: int, H: int, T: int, alpha: float, delta: float,
          c1: Optional[float] = None) -> int:
    """``ceil(C1 (sqrt(O)/alpha^2 + O^(2/3)/alpha^(4/3)) ln(2 S T H / delta))``."""
    c1 = pinned_c1() if c1 is None else c1
    return max(1, math.ceil(c1 * budget_factor(O, alpha) * math.log(2.0 * S * T * H / delta)))


def ost_betas(S: int, A: int, O: int, H: int, T: int, delta: float,
              c1: float = 1.0, c2: float = 1.0):
    """``beta1 = c1 H^3 ln(O S A H T / delta)`` and ``beta2 = c2 O ln(O S T H / delta)``."""
    beta1 = c1 * H**3 * math.log(O * S * A * H * T / delta)
    beta2 = c2 * O * math.log(O * S * T * H / delta)
    return beta1, beta2


def ost_hyperparameters(S, A, O, H, T, alpha, delta, bonus_c1=1.0, bonus_c2=1.0,
                        c1: Optional[float] = None) -> dict:
    beta1, beta2 = ost_betas(S, A, O, H, T, delta, bonus_c1, bonus_c2)
    test_delta = ost_test_delta(S, T, H, delta)
    return {"k": ost_k(S, O, H, T, alpha, delta, c1), "beta1": beta1, "beta2": beta2,
            "test_delta": test_delta, "num_blocks": design_num_blocks(test_delta)}


# --------------------------------------------------------------------------
# Count-level episodes
# --------------------------------------------------------------------------

@dataclass
class EpisodeCounts:
    """One episode summarized by per-block symbol counts.

    ``blocks[h]`` has shape ``(M_h, O)`` for the step's partition;
    ``totals[h]`` counts all ``k`` observations of step ``h``.
    """

    k: int
    actions: np.ndarray
    first_obs: np.ndarray
    blocks: list
    totals: np.ndarray
    hidden_states: Optional[np.ndarray] = None


def counts_from_trajectory(traj: KObsTrajectory, partitions, num_observations: int) -> EpisodeCounts:
    blocks = []
    for h, sizes in enumerate(partitions):
        obs = traj.observations[h]
        blocks.append(None if sizes is None else block_counts(obs, sizes, num_observations))
    totals = np.stack([np.bincount(traj.observations[h], minlength=num_observations)
                       for h in range(traj.horizon)])
    return EpisodeCounts(traj.k, traj.actions, traj.first_observations.copy(), blocks, totals,
                         traj.hidden_states)


def simulate_episode_counts(model: TabularPOMDP, policy: HistoryPolicy, k: int, partitions,
                            rng: np.random.Generator) -> EpisodeCounts:
    """Draw an episode and its block counts without materializing ``k`` symbols per step.

    The in-episode observation is the first symbol of the step's sequence,
    so it lands in the first nonempty block; every other symbol is an
    i.i.d. draw, giving multinomial counts per block. This has the same law
    as :func:`simulate_episode` followed by block counting.
    """
    play = simulate_episode(model, policy, 1, rng, oracle=True, check=False)
    states = play.hidden_states
    first = play.first_observations.copy()
    O = model.num_observations
    blocks, totals = [], np.zeros((model.horizon, O), dtype=np.int64)
    for h, sizes in enumerate(partitions):
        p = model.emissions[h, states[h]]
        used = 0 if sizes is None else int(sizes.sum())
        if sizes is None or used == 0:
            blocks.append(None if sizes is None else np.zeros((len(sizes), O), dtype=np.int64))
            totals[h] = rng.multinomial(k - 1, p)
            totals[h, first[h]] += 1
            continue
        n = np.array(sizes, dtype=np.int64)
        j0 = int(np.argmax(n > 0))
        n[j0] -= 1
        counts = rng.multinomial(n, p)
        counts[j0, first[h]] += 1
        blocks.append(counts)
        totals[h] = counts.sum(axis=0) + rng.multinomial(k - used, p)
    return EpisodeCounts(k, play.actions, first, blocks, totals, states)


# --------------------------------------------------------------------------
# Pseudo-state store
# --------------------------------------------------------------------------

class _Representatives:
    """Growable buffer of block counts with an optional reservoir cap."""

    def __init__(self, shape, cap: Optional[int]):
        self.cap = cap
        self.buf = np.empty((4,) + shape, dtype=np.int64)
        self.episodes: list = []
        self.n = 0
        self.seen = 0

    def add(self, counts, episode, rng):
        self.seen += 1
        if self.cap is not None and self.n >= self.cap:
            j = int(rng.integers(0, self.seen))
            if j < self.cap:
                self.buf[j] = counts
                self.episodes[j] = episode
            return
        if self.n == len(self.buf):
            self.buf = np.concatenate([self.buf, np.empty_like(self.buf)])
        self.buf[self.n] = counts
        self.episodes.append(episode)
        self.n += 1

    @property
    def blocks(self):
        return self.buf[: self.n]


class PseudoStateStore:
    """Pseudo-state labels per step, built by sequential closeness tests.

    Labels are 0-based internally (label ``i`` is pseudo-state ``i + 1``).
    ``rep_cap=None`` keeps every representative.
    """

    def __init__(self, horizon: int, k: int, num_observations: int, partitions,
                 rep_cap: Optional[int] = 25, rng=None):
        self.H, self.k, self.O = horizon, k, num_observations
        self.partitions = list(partitions)
        self.rep_cap = rep_cap
        self.rng = np.random.default_rng(rng)
        self.labels: list = [[] for _ in range(horizon)]
        self.assignments: list = []
        self.tallies = {"accept": 0, "reject": 0, "fail": 0}

    def count(self, h: int) -> int:
        return len(self.labels[h])

    @property
    def counts(self) -> np.ndarray:
        return np.array([self.count(h) for h in range(self.H)])

    def _matches(self, h, label, counts) -> bool:
        sizes = self.partitions[h]
        if sizes is None:
            n = label.n
            self.tallies["fail"] += n
            return n == 0
        reps = label.blocks
        accepts = majority(closeness_votes(counts[None], reps, sizes[None]))
        n_acc = int(accepts.sum())
        self.tallies["accept"] += n_acc
        self.tallies["reject"] += len(accepts) - n_acc
        return bool(accepts.all())

    def assign_counts(self, episode: EpisodeCounts) -> np.ndarray:
        """Label each step of an episode; creates a new label when no label accepts."""
        idx = len(self.assignments)
        out = np.empty(self.H, dtype=np.int64)
        for h in range(self.H):
            counts = episode.blocks[h]
            if counts is None:
                counts = np.zeros((0, self.O), dtype=np.int64)
            chosen = None
            for i, label in enumerate(self.labels[h]):
                if self._matches(h, label, counts):
                    chosen = i
                    break
            if chosen is None:
                self.labels[h].append(_Representatives(counts.shape, self.rep_cap))
                chosen = len(self.labels[h]) - 1
            self.labels[h][chosen].add(counts, idx, self.rng)
            out[h] = chosen
        self.assignments.append(out)
        return out

    def assign(self, traj: KObsTrajectory) -> np.ndarray:
        if traj.k != self.k:
            raise ValueError(f"block length {traj.k} does not match the store's k={self.k}")
        return self.assign_counts(counts_from_trajectory(traj, self.partitions, self.O))


def assign_pseudo_states(store: PseudoStateStore, traj: KObsTrajectory) -> np.ndarray:
    return store.assign(traj)


def permutation_consistent(labels: np.ndarray, hidden: np.ndarray) -> bool:
    """Whether some injective label-to-state map explains every assignment.

    ``labels`` and ``hidden`` have shape ``(episodes, H)``.
    """
    labels, hidden = np.asarray(labels), np.asarray(hidden)
    for h in range(labels.shape[1]):
        pairs = set(zip(labels[:, h].tolist(), hidden[:, h].tolist()))
        if len({l for l, _ in pairs}) != len(pairs) or len({s for _, s in pairs}) != len(pairs):
            return False
    return True


def label_to_state(labels: np.ndarray, hidden: np.ndarray, h: int) -> dict:
    return dict(zip(np.asarray(labels)[:, h].tolist(), np.asarray(hidden)[:, h].tolist()))


# --------------------------------------------------------------------------
# Estimation and bonuses
# --------------------------------------------------------------------------

@dataclass
class OstState:
    t: int
    num_labels: np.ndarray
    n_s: np.ndarray
    n_sa: np.ndarray
    d0: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    reward_bar: np.ndarray
    beta1: float
    beta2: float
    bonus_s: Optional[np.ndarray] = None
    bonus_sa: Optional[np.ndarray] = None
    reward_hat: Optional[np.ndarray] = None

    def planning_model(self) -> LatentRewardPOMDP:
        return LatentRewardPOMDP(self.d0, self.transitions, self.emissions, self.reward_hat, 1.0)


def bonus_values(n, beta: float, cap: float) -> np.ndarray:
    """``min(sqrt(beta / n), cap)`` with the cap at ``n = 0``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.sqrt(beta / n)
    return np.where(n > 0, np.minimum(raw, cap), cap)


def compute_bonuses(state: OstState, h: int, s: int, a: int):
    """``(b(s), b(s, a))`` at step ``h``."""
    H = state.n_s.shape[0]
    b_s = float(bonus_values(state.n_s[h, s], state.beta2, 2.0))
    b_sa = float(bonus_values(state.n_sa[h, s, a], state.beta1, 2.0 * H))
    return b_s, b_sa


def estimate_model(assignments: np.ndarray, actions: np.ndarray, first_obs: np.ndarray,
                   num_labels, rewards: np.ndarray, num_actions: int,
                   obs_totals: Optional[np.ndarray] = None, k: Optional[int] = None):
    """Empirical pseudo-state model from labelled episodes.

    Returns ``(d0, T, E, r_bar, n_s, n_sa)`` over ``S~ = max(1, max_h n_h)``
    pseudo-states. Normalizers are ``max(1, n)``; rows with zero count are
    uniform (transitions: over the labels that exist at the next step) and
    have ``r_bar = 0``. With ``obs_totals`` the emission estimate uses all
    ``k`` observations per step.
    """
    labels = np.asarray(assignments, dtype=np.int64).reshape(-1, rewards.shape[0])
    acts = np.asarray(actions, dtype=np.int64).reshape(labels.shape)
    obs = np.asarray(first_obs, dtype=np.int64).reshape(labels.shape)
    t, H = labels.shape
    O, A = rewards.shape[1], num_actions
    n_labels = np.maximum(1, np.asarray(num_labels, dtype=np.int64))
    S = int(n_labels.max())
    n_s = np.zeros((H, S), dtype=np.int64)
    n_sa = np.zeros((H, S, A), dtype=np.int64)
    E = np.zeros((H, S, O))
    T = np.zeros((H, S, A, S))
    for h in range(H):
        n_s[h] = np.bincount(labels[:, h], minlength=S)
        n_sa[h] = np.bincount(labels[:, h] * A + acts[:, h], minlength=S * A).reshape(S, A)
        if obs_totals is None:
            E[h] = np.bincount(labels[:, h] * O + obs[:, h], minlength=S * O).reshape(S, O)
        else:
            np.add.at(E[h], labels[:, h], np.asarray(obs_totals)[:, h])
        if h < H - 1:
            flat = (labels[:, h] * A + acts[:, h]) * S + labels[:, h + 1]
            T[h] = np.bincount(flat, minlength=S * A * S).reshape(S, A, S)
    scale = 1 if obs_totals is None else (k or 1)
    seen = n_s > 0
    E = np.where(seen[..., None], E / (scale * np.maximum(1, n_s))[..., None], 1.0 / O)
    r_bar = np.where(seen, np.einsum("hso,ho->hs", E, rewards), 0.0)
    for h in range(H):
        nxt = n_labels[h + 1] if h < H - 1 else n_labels[h]
        fill = np.zeros(S)
        fill[:nxt] = 1.0 / nxt
        if h < H - 1:
            has = n_sa[h] > 0
            T[h] = np.where(has[..., None], T[h] / np.maximum(1, n_sa[h])[..., None], fill)
        else:
            T[h] = fill
    d0 = np.zeros(S)
    if t:
        d0 = n_s[0] / t
    else:
        d0[0] = 1.0
    return d0, T, E, r_bar, n_s, n_sa


def optimistic_rewards(r_bar, n_s, n_sa, beta1, beta2):
    """``r_hat = min(1, r_bar + H b(s) + b(s, a))`` with bonus arrays."""
    H = r_bar.shape[0]
    b_s = bonus_values(n_s, beta2, 2.0)
    b_sa = bonus_values(n_sa, beta1, 2.0 * H)
    r_hat = np.minimum(1.0, r_bar[..., None] + H * b_s[..., None] + b_sa)
    return r_hat, b_s, b_sa


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------

@dataclass
class OstConfig:
    k: int
    delta: float = 0.1
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    bonus_c1: float = 1.0
    bonus_c2: float = 1.0
    test_delta: Optional[float] = None
    num_blocks: Optional[int] = None
    retries: int = 3
    fallback: bool = True
    rep_cap: Optional[int] = 25
    all_k_emissions: bool = False
    sampler: str = "auto"
    max_nodes: int = DEFAULT_MAX_NODES
    keep_policies: bool = False


@dataclass
class OstResult:
    values: np.ndarray
    regret: np.ndarray
    optimal_value: float
    final_policy: HistoryPolicy
    state: OstState
    store: PseudoStateStore
    permutation_ok: np.ndarray
    optimism_ok: np.ndarray
    log: list
    flags: list
    k: int
    policies: list = field(default_factory=list)

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def samples_per_episode(self) -> int:
        return self.k * len(self.store.partitions)


def _optimism_holds(r_hat, labels, hidden, true_R) -> bool:
    for h in range(r_hat.shape[0]):
        for lab, s in label_to_state(labels, hidden, h).items():
            if np.any(r_hat[h, lab] < true_R[h, s] - 1e-12):
                return False
    return True


def run_ost(env: TabularPOMDP, T: int, config: OstConfig, seed=0) -> OstResult:
    """Run ``T`` iterations and record oracle values of every policy played."""
    check_valid(env)
    S, A, O, H = env.dims
    cfg = config
    beta1_d, beta2_d = ost_betas(S, A, O, H, T, cfg.delta, cfg.bonus_c1, cfg.bonus_c2)
    beta1 = beta1_d if cfg.beta1 is None else cfg.beta1
    beta2 = beta2_d if cfg.beta2 is None else cfg.beta2
    test_delta = cfg.test_delta or ost_test_delta(S, T, H, cfg.delta)
    M = cfg.num_blocks or min(design_num_blocks(test_delta), cfg.k)

    env_ss, part_ss, store_ss = np.random.SeedSequence(seed).spawn(3)
    env_rng = np.random.default_rng(env_ss)
    part_rng = np.random.default_rng(part_ss)
    partitions = [draw_block_sizes(cfg.k, M, part_rng, cfg.retries, cfg.fallback)[0]
                  for _ in range(H)]
    store = PseudoStateStore(H, cfg.k, O, partitions, cfg.rep_cap, store_ss)
    use_sequences = cfg.sampler == "sequence" or (
        cfg.sampler == "auto" and cfg.k <= SEQUENCE_SAMPLER_MAX_K)

    flags = []
    if distinguishability(env).alpha <= 0:
        flags.append("distinguishability 0")
    optimum = pop_exact(env, cfg.max_nodes).value
    true_R = env.latent_rewards()[:, :, 0]

    actions, first, hidden, totals = [], [], [], []
    values = np.empty(T)
    perm_ok = np.empty(T, dtype=bool)
    opt_ok = np.empty(T, dtype=bool)
    log, policies = [], []
    state = None
    policy: HistoryPolicy = UniformPolicy(A)
    for t in range(T):
        d0, Th, Eh, r_bar, n_s, n_sa = estimate_model(
            np.array(store.assignments).reshape(t, H), np.array(actions).reshape(t, H),
            np.array(first).reshape(t, H), store.counts, env.rewards, A,
            np.array(totals).reshape(t, H, O) if cfg.all_k_emissions else None, cfg.k)
        r_hat, b_s, b_sa = optimistic_rewards(r_bar, n_s, n_sa, beta1, beta2)
        state = OstState(t, store.counts, n_s, n_sa, d0, Th, Eh, r_bar, beta1, beta2,
                         b_s, b_sa, r_hat)
        try:
            plan = pop_exact(state.planning_model(), cfg.max_nodes)
        except ValueError as exc:
            raise type(exc)(f"iteration {t + 1}: {exc}") from exc
        policy = require_single_obs(plan.policy)
        if cfg.keep_policies:
            policies.append(policy)
        values[t] = evaluate_policy(env, policy, cfg.max_nodes)
        if t:
            opt_ok[t] = perm_ok[t - 1] and _optimism_holds(
                r_hat, np.array(store.assignments), np.array(hidden), true_R)
        else:
            opt_ok[t] = True

        if use_sequences:
            traj = simulate_episode(env, policy, cfg.k, env_rng, oracle=True, check=False)
            episode = counts_from_trajectory(traj, partitions, O)
        else:
            episode = simulate_episode_counts(env, policy, cfg.k, partitions, env_rng)
        before = dict(store.tallies)
        store.assign_counts(episode)
        actions.append(episode.actions)
        first.append(episode.first_obs)
        hidden.append(episode.hidden_states)
        totals.append(episode.totals)
        perm_ok[t] = (perm_ok[t - 1] if t else True) and permutation_consistent(
            np.array(store.assignments), np.array(hidden))
        log.append({"iteration": t + 1, "value": values[t], "regret": optimum - values[t],
                    "planned_value": plan.value, "pseudo_states": store.counts.tolist(),
                    "tests": {key: store.tallies[key] - before[key] for key in before},
                    "mean_bonus_s": float(b_s.mean()), "mean_bonus_sa": float(b_sa.mean()),
                    "permutation_ok": bool(perm_ok[t])})

    regret = optimum - values
    return OstResult(values, regret, optimum, policy, state, store, perm_ok, opt_ok, log,
                     flags, cfg.k, policies)
