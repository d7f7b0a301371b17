"""Poissonized chi-square closeness and identity tests with majority boosting.

Both tests split the sample into ``M`` blocks, compute a per-block
statistic, let each block vote, and accept when at least half of the blocks
vote for "same distribution". All statistics are functions of per-block
symbol counts, so every test has a count-level entry point
(``*_votes``) that the vectorized Monte Carlo routines share with the
sample-level API.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

DEFAULT_C1 = 4.0
CALIBRATION_FILE = "calibration.json"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    FAIL = "fail"


def design_num_blocks(delta: float) -> int:
    """``M = max(1, ceil(18 ln(1/delta)))``: per-block correctness 2/3 boosts to ``1 - delta``."""
    return max(1, math.ceil(18.0 * math.log(1.0 / delta)))


@dataclass
class TestConfig:
    """Parameters of one closeness or identity test.

    ``num_blocks`` defaults to :func:`design_num_blocks`. With
    ``fallback=False`` a Poisson overshoot that survives every retry ends
    the test with ``Verdict.FAIL``.
    """

    __test__ = False

    k: int
    delta: float = 0.1
    num_blocks: Optional[int] = None
    alpha: Optional[float] = None
    retries: int = 3
    fallback: bool = True
    poisson: bool = True

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.num_blocks is None:
            self.num_blocks = design_num_blocks(self.delta)
        if self.num_blocks < 1:
            raise ValueError("need at least one block")
        if self.k < self.num_blocks:
            raise ValueError(f"k={self.k} is smaller than the number of blocks {self.num_blocks}")
        if self.alpha is not None and not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.retries < 0:
            raise ValueError("retries must be nonnegative")


@dataclass
class TestTrace:
    """Per-block record of a test run.

    ``path`` is ``"poisson"`` (first draw fit), ``"retry-r"`` (r-th redraw
    fit), ``"fallback"`` (equal blocks) or ``"fail"``.
    """

    __test__ = False

    verdict: Verdict
    path: str
    block_sizes: np.ndarray
    counts_x: Optional[np.ndarray] = None
    counts_y: Optional[np.ndarray] = None
    statistics: Optional[np.ndarray] = None
    thresholds: Optional[np.ndarray] = None
    votes: Optional[np.ndarray] = None
    degenerate: bool = False

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict.value, "path": self.path,
               "block_sizes": np.asarray(self.block_sizes).tolist(), "degenerate": self.degenerate}
        for name in ("counts_x", "counts_y", "statistics", "thresholds", "votes"):
            value = getattr(self, name)
            out[name] = None if value is None else np.asarray(value).tolist()
        return out


# --------------------------------------------------------------------------
# Block sizes
# --------------------------------------------------------------------------

def equal_block_sizes(k: int, M: int) -> np.ndarray:
    return np.full(M, k // M, dtype=np.int64)


def draw_block_sizes(k: int, M: int, rng: np.random.Generator, retries: int = 3,
                     fallback: bool = True, poisson: bool = True):
    """Poisson block sizes with mean ``k / M`` and the overshoot policy.

    Returns ``(sizes, path)``; ``sizes`` is ``None`` on the fail path.
    """
    if not poisson:
        return equal_block_sizes(k, M), "fallback"
    for attempt in range(retries + 1):
        sizes = rng.poisson(k / M, size=M)
        if sizes.sum() <= k:
            return sizes, "poisson" if attempt == 0 else f"retry-{attempt}"
    if fallback:
        return equal_block_sizes(k, M), "fallback"
    return None, "fail"


def draw_block_sizes_batch(k: int, M: int, n: int, rng: np.random.Generator, retries: int = 3,
                           fallback: bool = True, poisson: bool = True):
    """Vectorized :func:`draw_block_sizes` for ``n`` independent tests.

    Returns ``(sizes (n, M), failed (n,))``; failed rows hold zeros.
    """
    if not poisson:
        return np.tile(equal_block_sizes(k, M), (n, 1)), np.zeros(n, bool)
    sizes = rng.poisson(k / M, size=(n, M))
    bad = sizes.sum(axis=1) > k
    for _ in range(retries):
        if not bad.any():
            break
        sizes[bad] = rng.poisson(k / M, size=(int(bad.sum()), M))
        bad = sizes.sum(axis=1) > k
    failed = np.zeros(n, bool)
    if bad.any():
        if fallback:
            sizes[bad] = equal_block_sizes(k, M)
        else:
            sizes[bad] = 0
            failed = bad
    return sizes, failed


def poisson_overshoot_bound(k: int, retries: int = 3) -> float:
    """Upper bound on the fail probability with fallback disabled.

    Uses ``P(X > lam + x) <= exp(x - (lam + x) ln(1 + x / lam))`` at
    ``lam = k``, ``x = 1`` for the total ``Poi(k)``, once per attempt.
    """
    lam, x = float(k), 1.0
    single = math.exp(x - (lam + x) * math.log1p(x / lam))
    return min(1.0, single) ** (retries + 1)


def block_counts(samples: np.ndarray, sizes: np.ndarray, num_symbols: int) -> np.ndarray:
    """Symbol counts of consecutive blocks of ``samples``, shape ``(M, O)``."""
    used = int(sizes.sum())
    block_id = np.repeat(np.arange(len(sizes)), sizes)
    flat = np.bincount(block_id * num_symbols + np.asarray(samples[:used], dtype=np.int64),
                       minlength=len(sizes) * num_symbols)
    return flat.reshape(len(sizes), num_symbols)


# --------------------------------------------------------------------------
# Count-level statistics
# --------------------------------------------------------------------------

def closeness_statistic(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``sum_o ((X_o - Y_o)^2 - X_o - Y_o) / (X_o + Y_o)`` with 0/0 terms dropped."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    tot = X + Y
    num = (X - Y) ** 2 - tot
    terms = np.divide(num, tot, out=np.zeros_like(num), where=tot > 0)
    return terms.sum(axis=-1)


def closeness_votes(X, Y, sizes) -> np.ndarray:
    return closeness_statistic(X, Y) <= np.sqrt(3.0 * np.asarray(sizes, dtype=float))


def identity_support(q: np.ndarray, alpha: float) -> np.ndarray:
    """Symbols kept by the identity test: ``q_o >= alpha / (50 O)``."""
    q = np.asarray(q, dtype=float)
    return q >= alpha / (50.0 * q.size)


def identity_statistic(X: np.ndarray, q: np.ndarray, sizes, alpha: float) -> np.ndarray:
    """``sum_{o in A} ((X_o - N q_o)^2 - X_o) / (N q_o)``; zero-size blocks score 0."""
    X = np.asarray(X, dtype=float)
    q = np.asarray(q, dtype=float)
    keep = identity_support(q, alpha)
    N = np.asarray(sizes, dtype=float)[..., None]
    expected = N * q[keep]
    num = (X[..., keep] - expected) ** 2 - X[..., keep]
    terms = np.divide(num, expected, out=np.zeros_like(num), where=expected > 0)
    return terms.sum(axis=-1)


def identity_votes(X, q, sizes, alpha: float) -> np.ndarray:
    N = np.asarray(sizes, dtype=float)
    return identity_statistic(X, q, sizes, alpha) <= N * alpha**2 / 10.0


def majority(votes: np.ndarray) -> np.ndarray:
    M = votes.shape[-1]
    return votes.sum(axis=-1) >= M / 2.0


# --------------------------------------------------------------------------
# Sample-level tests
# --------------------------------------------------------------------------

def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def closeness_test(samples_x, samples_y, cfg: TestConfig, rng=None,
                   num_symbols: Optional[int] = None):
    """Two-sample test of ``p_x == p_y`` against ``l1``-far alternatives.

    Returns
    -------
    verdict : Verdict
    trace : TestTrace
    """
    x = np.asarray(samples_x, dtype=np.int64)
    y = np.asarray(samples_y, dtype=np.int64)
    if x.shape != (cfg.k,) or y.shape != (cfg.k,):
        raise ValueError(f"both sample lists must have length k={cfg.k}, got {x.size} and {y.size}")
    O = num_symbols or int(max(x.max(initial=0), y.max(initial=0))) + 1
    sizes, path = draw_block_sizes(cfg.k, cfg.num_blocks, _as_rng(rng), cfg.retries,
                                   cfg.fallback, cfg.poisson)
    if sizes is None:
        return Verdict.FAIL, TestTrace(Verdict.FAIL, path, np.zeros(0, dtype=np.int64))
    X = block_counts(x, sizes, O)
    Y = block_counts(y, sizes, O)
    stats = closeness_statistic(X, Y)
    thresholds = np.sqrt(3.0 * sizes)
    votes = stats <= thresholds
    verdict = Verdict.ACCEPT if majority(votes) else Verdict.REJECT
    return verdict, TestTrace(verdict, path, sizes, X, Y, stats, thresholds, votes.astype(int))


def identity_test(samples, q, alpha: float, cfg: TestConfig, rng=None):
    """One-sample test of ``p == q`` against ``p`` being ``alpha``-far in ``l1``.

    Symbols with ``q_o < alpha / (50 O)`` are ignored. An empty kept set
    makes every block vote "same" and marks the trace degenerate.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or np.any(q < -1e-9) or abs(q.sum() - 1) > 1e-9:
        raise ValueError("q must be a probability vector")
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    x = np.asarray(samples, dtype=np.int64)
    if x.shape != (cfg.k,):
        raise ValueError(f"expected k={cfg.k} samples, got {x.size}")
    if x.size and (x.min() < 0 or x.max() >= q.size):
        raise ValueError("sample outside the support of q")
    sizes, path = draw_block_sizes(cfg.k, cfg.num_blocks, _as_rng(rng), cfg.retries,
                                   cfg.fallback, cfg.poisson)
    if sizes is None:
        return Verdict.FAIL, TestTrace(Verdict.FAIL, path, np.zeros(0, dtype=np.int64))
    X = block_counts(x, sizes, q.size)
    stats = identity_statistic(X, q, sizes, alpha)
    thresholds = sizes * alpha**2 / 10.0
    votes = stats <= thresholds
    verdict = Verdict.ACCEPT if majority(votes) else Verdict.REJECT
    degenerate = not identity_support(q, alpha).any()
    return verdict, TestTrace(verdict, path, sizes, X, None, stats, thresholds,
                              votes.astype(int), degenerate)


# --------------------------------------------------------------------------
# Per-state identity testers
# --------------------------------------------------------------------------

@dataclass
class StateIdentityTester:
    """Deterministic identity test of blocks against one emission column.

    Blocks are split into ``M`` equal consecutive chunks of ``k // M``
    symbols, so the predicate is a fixed function of the block. ``z`` is 0
    for "generated by this state" and 1 otherwise.
    """

    q: np.ndarray
    alpha: float
    k: int
    num_blocks: int

    @property
    def block_size(self) -> int:
        return self.k // self.num_blocks

    def chunk_counts(self, blocks: np.ndarray) -> np.ndarray:
        """Per-chunk counts of blocks with shape ``(..., k)``, result ``(..., M, O)``."""
        blocks = np.asarray(blocks, dtype=np.int64)
        b, M, O = self.block_size, self.num_blocks, self.q.size
        used = blocks[..., : M * b].reshape(blocks.shape[:-1] + (M, b))
        return (used[..., None] == np.arange(O)).sum(axis=-2)

    def rejects_counts(self, counts: np.ndarray) -> np.ndarray:
        """Vectorized ``z`` from chunk counts of shape ``(..., M, O)``."""
        sizes = np.full(counts.shape[:-1], self.block_size)
        return ~majority(identity_votes(counts, self.q, sizes, self.alpha))

    def z(self, block) -> int:
        return int(self.rejects_counts(self.chunk_counts(block)))

    def accepts(self, block) -> bool:
        return self.z(block) == 0

    __call__ = z


def state_identity_tester(model, h: int, s: int, k: int, delta: float,
                          alpha: Optional[float] = None) -> StateIdentityTester:
    """Identity tester for emission column ``s`` of step ``h``.

    ``alpha`` defaults to the step's distinguishability. The block count is
    the design value clamped to ``k`` so that every chunk is nonempty.
    """
    E = np.asarray(model.emissions[h])
    if alpha is None:
        diffs = np.abs(E[:, None, :] - E[None, :, :]).sum(-1)
        S = E.shape[0]
        alpha = float(diffs[~np.eye(S, dtype=bool)].min()) if S > 1 else 2.0
    if alpha <= 0:
        raise ValueError(f"step {h} has distinguishability 0; there is nothing to test against")
    alpha = min(alpha, 2.0)
    M = min(design_num_blocks(delta), k)
    return StateIdentityTester(q=E[s].copy(), alpha=alpha, k=k, num_blocks=M)


# --------------------------------------------------------------------------
# Budgets and calibration
# --------------------------------------------------------------------------

def budget_factor(O: int, alpha: float) -> float:
    """``sqrt(O) / alpha^2 + O^(2/3) / alpha^(4/3)``."""
    return math.sqrt(O) / alpha**2 + O ** (2.0 / 3.0) / alpha ** (4.0 / 3.0)


def closeness_budget_k(O: int, alpha: float, delta: float, c1: Optional[float] = None,
                   log_arg: Optional[float] = None) -> int:
    """``ceil(C1 (sqrt(O)/alpha^2 + O^(2/3)/alpha^(4/3)) ln(log_arg))``.

    ``log_arg`` defaults to ``1 / delta``; ``C1`` defaults to the pinned value.
    """
    c1 = pinned_c1() if c1 is None else c1
    arg = 1.0 / delta if log_arg is None else log_arg
    return max(1, math.ceil(c1 * budget_factor(O, alpha) * math.log(arg)))


def identity_budget_k(O: int, alpha: float, delta: float, c1: Optional[float] = None) -> int:
    c1 = pinned_c1() if c1 is None else c1
    return max(1, math.ceil(c1 * math.sqrt(O) / alpha**2 * math.log(1.0 / delta)))


def _calibration_paths():
    cache = os.environ.get("MOMDP_CACHE_DIR")
    if cache:
        yield Path(cache) / CALIBRATION_FILE
    yield Path(__file__).with_name(CALIBRATION_FILE)


def pinned_c1() -> float:
    """C1 from ``$MOMDP_CACHE_DIR/calibration.json``, else the packaged file, else 4."""
    for path in _calibration_paths():
        if path.is_file():
            return float(json.loads(path.read_text())["c1"])
    return DEFAULT_C1


def adversarial_pair(O: int, alpha: float):
    """Uniform distribution and a copy perturbed by ``+-eps`` on symbol pairs.

    The perturbation is spread over ``floor(O / 2)`` pairs so that the two
    distributions are exactly ``alpha`` apart in ``l1``.
    """
    if O < 2:
        raise ValueError("need at least two symbols")
    pairs = O // 2
    eps = alpha / (2 * pairs)
    if eps > 1.0 / O + 1e-12:
        raise ValueError(f"alpha={alpha} is not reachable from uniform over {O} symbols")
    p = np.full(O, 1.0 / O)
    q = p.copy()
    q[:pairs] += eps
    q[pairs:2 * pairs] -= eps
    return p, np.clip(q, 0.0, None)


def _chunks(n, size):
    start = 0
    while start < n:
        yield min(size, n - start)
        start += size


def closeness_accept_rate(p, q, k: int, delta: float, n_trials: int, rng, num_blocks=None,
                          retries: int = 3, fallback: bool = True, chunk: int = 2000):
    """Monte Carlo acceptance and fail rates of :func:`closeness_test` on ``(p, q)``.

    Simulates block counts directly: given Poisson block sizes, each side's
    block counts are multinomial.
    """
    rng = _as_rng(rng)
    M = num_blocks or design_num_blocks(delta)
    accepted = failed = 0
    for n in _chunks(n_trials, chunk):
        sizes, fail = draw_block_sizes_batch(k, M, n, rng, retries, fallback)
        X = rng.multinomial(sizes, p)
        Y = rng.multinomial(sizes, q)
        acc = majority(closeness_votes(X, Y, sizes)) & ~fail
        accepted += int(acc.sum())
        failed += int(fail.sum())
    return accepted / n_trials, failed / n_trials


def closeness_error_rates(O: int, alpha: float, delta: float, k: int, n_trials: int, rng,
                          **kw) -> dict:
    """Both error modes on the adversarial pair.

    ``type1`` rejects identical inputs (fails count as errors); ``type2``
    accepts inputs ``alpha`` apart.
    """
    rng = _as_rng(rng)
    p, q = adversarial_pair(O, alpha)
    same, fail_same = closeness_accept_rate(p, p, k, delta, n_trials, rng, **kw)
    diff, fail_diff = closeness_accept_rate(p, q, k, delta, n_trials, rng, **kw)
    return {"type1": 1.0 - same, "type2": diff, "fail": (fail_same + fail_diff) / 2}


def identity_error_rates(O: int, alpha: float, delta: float, k: int, n_trials: int, rng,
                         retries: int = 3, fallback: bool = True, chunk: int = 2000) -> dict:
    """Both error modes of :func:`identity_test` with ``q`` uniform and the perturbed alternative."""
    rng = _as_rng(rng)
    p, q_alt = adversarial_pair(O, alpha)
    M = design_num_blocks(delta)
    rates = {}
    for name, source in (("type1", p), ("type2", q_alt)):
        accepted = 0
        for n in _chunks(n_trials, chunk):
            sizes, fail = draw_block_sizes_batch(k, M, n, rng, retries, fallback)
            X = rng.multinomial(sizes, source)
            accepted += int((majority(identity_votes(X, p, sizes, alpha)) & ~fail).sum())
        rate = accepted / n_trials
        rates[name] = 1.0 - rate if name == "type1" else rate
    return rates


def smallest_passing_k(error_fn, delta: float, k_lo: int = 1, k_hi: int = 1 << 24) -> int:
    """Smallest ``k`` in ``[k_lo, k_hi]`` with ``max(error_fn(k)) <= delta``.

    Doubles from ``k_lo`` until a passing ``k`` is found, then bisects;
    assumes error rates are nonincreasing in ``k``.
    """
    def ok(k):
        rates = error_fn(k)
        return max(rates["type1"], rates["type2"]) <= delta

    lo, hi = k_lo, max(k_lo, 1)
    while not ok(hi):
        lo = hi + 1
        hi *= 2
        if hi > k_hi:
            raise RuntimeError(f"no k <= {k_hi} reached error {delta}")
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return hi


def recommend_k(O: int, alpha: float, delta: float, n_trials: int = 2000, seed=0,
                test: str = "closeness") -> int:
    """Smallest ``k`` whose Monte Carlo error modes are both at most ``delta``.

    Every evaluation reuses ``seed`` so the search is deterministic.
    """
    M = design_num_blocks(delta)
    rates = closeness_error_rates if test == "closeness" else identity_error_rates

    def error_fn(k):
        return rates(O, alpha, delta, k, n_trials, np.random.default_rng(seed))

    return smallest_passing_k(error_fn, delta, k_lo=M)


ACCEPTANCE_GRID = [{"O": O, "alpha": a, "delta": d}
                   for O in (2, 8, 32) for a in (0.25, 0.5, 1.0) for d in (0.05, 0.1)]


def calibrate(grid=None, n_trials: int = 10_000, seed=0, margin: float = 1.1,
              include_identity: bool = False) -> dict:
    """Smallest passing closeness ``k`` per cell and the implied C1.

    The implied constant of a cell is ``k_min / (factor * ln(1/delta))``;
    the pinned C1 is ``margin`` times the largest implied constant.
    """
    cells = []
    for i, cell in enumerate(grid or ACCEPTANCE_GRID):
        O, alpha, delta = int(cell["O"]), float(cell["alpha"]), float(cell["delta"])
        scale = budget_factor(O, alpha) * math.log(1.0 / delta)
        k_min = recommend_k(O, alpha, delta, n_trials, seed=(seed, i))
        row = {"O": O, "alpha": alpha, "delta": delta, "k_min": k_min,
               "c1_implied": k_min / scale}
        if include_identity:
            row["identity_k_min"] = recommend_k(O, alpha, delta, n_trials, seed=(seed, i),
                                                test="identity")
        rates = closeness_error_rates(O, alpha, delta, k_min, n_trials,
                                      np.random.default_rng((seed, i, 1)))
        row.update({"type1_at_k_min": rates["type1"], "type2_at_k_min": rates["type2"]})
        if cell.get("k") is not None:
            k = int(cell["k"])
            rates = closeness_error_rates(O, alpha, delta, k, n_trials,
                                          np.random.default_rng((seed, i, 2)))
            row.update({"k": k, "type1_at_k": rates["type1"], "type2_at_k": rates["type2"]})
            if include_identity:
                rates = identity_error_rates(O, alpha, delta, k, n_trials,
                                             np.random.default_rng((seed, i, 3)))
                row.update({"identity_type1_at_k": rates["type1"],
                            "identity_type2_at_k": rates["type2"]})
        cells.append(row)
    c1 = margin * max(row["c1_implied"] for row in cells)
    return {"c1": c1, "margin": margin, "n_trials": n_trials, "seed": seed, "cells": cells}
