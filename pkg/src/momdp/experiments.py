"""Reproducible experiment batteries behind the acceptance checks and demos.

Each function returns a plain dict of measured quantities plus a boolean
``passed`` evaluated at the stated threshold. Everything is seeded.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .dist_testing import ACCEPTANCE_GRID, budget_factor, closeness_error_rates, pinned_c1
from .envs import (lock_good_actions, make_combination_lock, make_random_distinguishable,
                   make_random_revealing, make_vandermonde_family)
from .komle import run_komle
from .ost import OstConfig, ost_k, run_ost
from .spectral import (extend_left_inverse, minimal_certifying_k, numerical_rank,
                       one_to_one_norm, revealing_certificate, tensor_power)
from .suites import (STANDARD_DISTINGUISHABLE, distinguishable_env, lock_class, revealing_class,
                     vandermonde_class)


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        out["seconds"] = time.perf_counter() - start
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --------------------------------------------------------------------------
# Combination lock
# --------------------------------------------------------------------------

def komle_output_value(env, model_class, episodes: int, k: int, seed) -> float:
    """Value of the k-OMLE policy selected after ``episodes`` episodes of data.

    Each iteration consumes ``H`` episodes, so ``episodes // H`` complete
    iterations fit the budget; the output is the next selection.
    """
    iters = episodes // env.horizon
    return float(run_komle(env, model_class, iters + 1, k, seed=seed).values[-1])


def ost_output_value(env, episodes: int, config: OstConfig, seed) -> float:
    """Value of the OST policy planned after ``episodes`` episodes."""
    return float(run_ost(env, episodes + 1, config, seed=seed).values[-1])


@_timed
def lock_hardness(H: int = 4, A: int = 2, ks=(1, 4, 16), seeds=range(50),
                  threshold: float = 0.5, fail_fraction: float = 0.9,
                  ost_large_seeds: int = 5) -> dict:
    """Small budgets fail on the lock; ten times ``A^(H-1)`` episodes suffice for k-OMLE.

    Small budgets run from one episode to ``A^(H-1) / 10`` (at least one).
    OST at the large budget is reported for information only: the lock has
    zero distinguishability before the last step.
    """
    seeds = list(seeds)
    small_budgets = range(1, max(1, A ** (H - 1) // 10) + 1)
    large = 10 * A ** (H - 1)
    rows = []
    for k in ks:
        for episodes in small_budgets:
            fail_komle = fail_ost = 0
            for seed in seeds:
                env = make_combination_lock(H, A, seed=seed)
                mc = lock_class(H, A, lock_good_actions(H, A, seed), T=large // H + 1)
                fail_komle += komle_output_value(env, mc, episodes, k, seed) <= threshold
                fail_ost += ost_output_value(env, episodes, OstConfig(k=k), seed) <= threshold
            rows.append({"k": k, "episodes": episodes,
                         "komle_fail_fraction": fail_komle / len(seeds),
                         "ost_fail_fraction": fail_ost / len(seeds)})
        solved = 0
        for seed in seeds:
            env = make_combination_lock(H, A, seed=seed)
            mc = lock_class(H, A, lock_good_actions(H, A, seed), T=large // H + 1)
            solved += komle_output_value(env, mc, large, k, seed) >= 1 - 1e-9
        ost_solved = 0
        for seed in seeds[:ost_large_seeds]:
            env = make_combination_lock(H, A, seed=seed)
            cfg = OstConfig(k=k, bonus_c1=OST_SUITE_BONUS, bonus_c2=OST_SUITE_BONUS)
            ost_solved += ost_output_value(env, large, cfg, seed) >= 1 - 1e-9
        rows.append({"k": k, "episodes": large, "komle_solved_fraction": solved / len(seeds),
                     "ost_solved": ost_solved, "ost_runs": min(ost_large_seeds, len(seeds))})
    small_ok = all(r["komle_fail_fraction"] >= fail_fraction and
                   r["ost_fail_fraction"] >= fail_fraction
                   for r in rows if "komle_fail_fraction" in r)
    large_ok = all(r["komle_solved_fraction"] == 1.0 for r in rows if "komle_solved_fraction" in r)
    return {"rows": rows, "passed": small_ok and large_ok}


# --------------------------------------------------------------------------
# Spectral checks
# --------------------------------------------------------------------------

@_timed
def vandermonde_ranks(ks=(2, 3, 4)) -> dict:
    """Rank of ``O^(x)k`` is ``k + 1`` and of ``O^(x)(k+1)`` is ``k + 2``."""
    rows = []
    for k in ks:
        v = np.linspace(0.1, 0.9, k + 2)
        E = make_vandermonde_family(k, v).emission_matrix(0)
        rows.append({"k": k, "rank_k": numerical_rank(tensor_power(E, k)),
                     "rank_k_plus_1": numerical_rank(tensor_power(E, k + 1))})
    passed = all(r["rank_k"] == r["k"] + 1 and r["rank_k_plus_1"] == r["k"] + 2 for r in rows)
    return {"rows": rows, "passed": passed}


def _revealing_instance(i: int):
    S = 2 + i % 3
    O = S + (i // 3) % 2
    k = 1 if i % 2 == 0 else 2
    return make_random_revealing(S, 2, O, 2, k=k, seed=1000 + i), k


@_timed
def left_inverse_extension(n_instances: int = 100, lp_cap: int = 256) -> dict:
    """``extend_left_inverse`` keeps ``B O^(x)(k+1) = I`` and never grows the norm."""
    worst_residual, worst_growth, checked = 0.0, -math.inf, 0
    for i in range(n_instances):
        model, k = _revealing_instance(i)
        for h in range(model.horizon):
            methods = ["pseudo_inverse"]
            if model.num_observations ** k <= lp_cap:
                methods.append("lp_exact")
            for method in methods:
                cert = revealing_certificate(model, h, k, method)
                ext = extend_left_inverse(cert)
                worst_residual = max(worst_residual, ext.identity_residual())
                worst_growth = max(worst_growth, ext.norm - cert.norm)
                checked += 1
    passed = worst_residual <= 1e-6 and worst_growth <= 1e-9
    return {"certificates": checked, "max_residual": worst_residual,
            "max_norm_growth": worst_growth, "passed": passed}


def _distinguishable_instance(i: int):
    S = 2 + i % 3
    O = min(S + (i // 3) % 2, 4)
    alpha = 0.5 + 0.1 * ((i // 2) % 3)
    return make_random_distinguishable(S, 2, O, 1, alpha, seed=2000 + i)


@_timed
def embedded_certificates(n_instances: int = 20, k_max: int = 1 << 14, mc_samples: int = 5000,
                          rel_tol: float = 0.05) -> dict:
    """Swept minimal ``k`` of the test-embedded inverse on distinguishable instances."""
    rows = []
    for i in range(n_instances):
        model, alpha = _distinguishable_instance(i)
        k, res = minimal_certifying_k(model, 0, k_max=k_max, rel_tol=rel_tol,
                                      mc_samples=mc_samples, seed=i)
        y_norm = one_to_one_norm(res.Y) if res.Y is not None else res.y_norm
        rows.append({"S": model.num_states, "O": model.num_observations, "alpha": alpha,
                     "k": k, "mode": res.mode, "norm": res.norm, "y_norm": y_norm,
                     "perturbation_norm": res.perturbation_norm,
                     "entry_radius": res.entry_radius})
    passed = all(r["norm"] <= 2 + 1e-6 and r["y_norm"] == 1.0 for r in rows)
    return {"rows": rows, "passed": passed}


# --------------------------------------------------------------------------
# Tester calibration
# --------------------------------------------------------------------------

@_timed
def closeness_calibration_check(grid=None, n_trials: int = 10_000, seed: int = 7,
                                c1=None) -> dict:
    """Both error modes at the pinned budget on the adversarial grid."""
    c1 = pinned_c1() if c1 is None else c1
    rows = []
    for i, cell in enumerate(grid or ACCEPTANCE_GRID):
        O, alpha, delta = cell["O"], cell["alpha"], cell["delta"]
        k = math.ceil(c1 * budget_factor(O, alpha) * math.log(1 / delta))
        rates = closeness_error_rates(O, alpha, delta, k, n_trials,
                                      np.random.default_rng((seed, i)))
        tol = delta + 2 * math.sqrt(delta * (1 - delta) / n_trials)
        rows.append({"O": O, "alpha": alpha, "delta": delta, "k": k, "type1": rates["type1"],
                     "type2": rates["type2"], "tolerance": tol,
                     "ok": rates["type1"] <= tol and rates["type2"] <= tol})
    return {"c1": c1, "rows": rows, "passed": all(r["ok"] for r in rows)}


# --------------------------------------------------------------------------
# OST batteries
# --------------------------------------------------------------------------

OST_SUITE_T = 500
OST_SUITE_DELTA = 0.1
OST_SUITE_BONUS = 0.01


def ost_suite_run(seed: int, T: int = OST_SUITE_T, rep_cap=None, c1=None):
    """One OST run on the standard distinguishable suite with the union-bounded closeness budget ``k``."""
    p = STANDARD_DISTINGUISHABLE
    env, alpha = distinguishable_env(seed, p["S"], p["A"], p["O"], p["H"], p["alpha"])
    k = ost_k(p["S"], p["O"], p["H"], T, p["alpha"], OST_SUITE_DELTA, c1)
    cfg = OstConfig(k=k, delta=OST_SUITE_DELTA, bonus_c1=OST_SUITE_BONUS,
                    bonus_c2=OST_SUITE_BONUS, rep_cap=rep_cap)
    return run_ost(env, T, cfg, seed=seed)


@_timed
def ost_battery(seeds=range(40), regret_seeds=range(20), T: int = OST_SUITE_T,
                perm_fraction: float = 0.85, ratio_max: float = 1.6,
                final_max: float = 0.05) -> dict:
    """Pseudo-state correctness on all seeds and regret shape on the first 20."""
    seeds, regret_seeds = list(seeds), set(regret_seeds)
    perm, curves, k = [], [], None
    for seed in seeds:
        res = ost_suite_run(seed, T)
        k = res.k
        perm.append(bool(res.permutation_ok[-1]))
        if seed in regret_seeds:
            curves.append(res.regret)
    curves = np.array(curves)
    cum = curves.cumsum(axis=1).mean(axis=0)
    half = T // 2
    ratio = float(cum[T - 1] / cum[half - 1]) if cum[half - 1] > 0 else 1.0
    final = float(curves[:, -1].mean())
    perm_rate = float(np.mean(perm))
    return {"k": k, "T": T, "permutation_fraction": perm_rate,
            "permutation_passed": perm_rate >= perm_fraction,
            "regret_half": float(cum[half - 1]), "regret_full": float(cum[T - 1]),
            "regret_ratio": ratio, "final_regret": final,
            "regret_passed": ratio <= ratio_max and final <= final_max,
            "mean_cumulative_regret": cum.tolist()}


# --------------------------------------------------------------------------
# k-OMLE batteries
# --------------------------------------------------------------------------

@_timed
def komle_battery(seeds=range(20), T_revealing: int = 300, k_revealing: int = 2,
                  T_vander: int = 80, delta: float = 0.1, gap_max: float = 0.05,
                  gap_fraction: float = 0.9, dominance_fraction: float = 0.8) -> dict:
    """Retention, convergence on the revealing suite and k=3 vs k=1 dominance."""
    seeds = list(seeds)
    truth, mc = revealing_class(T_revealing, delta)
    gaps, retained = [], []
    for seed in seeds:
        res = run_komle(truth, mc, T_revealing, k_revealing, seed=seed)
        gaps.append(float(res.final_gap))
        retained.append(bool(res.retained.all()))
    vtruth, vmc = vandermonde_class(T_vander, delta)
    pairs = []
    for seed in seeds:
        g1 = run_komle(vtruth, vmc, T_vander, 1, seed=seed)
        g3 = run_komle(vtruth, vmc, T_vander, 3, seed=seed)
        retained += [bool(g1.retained.all()), bool(g3.retained.all())]
        pairs.append((float(g1.final_gap), float(g3.final_gap)))
    gap_ok = float(np.mean(np.array(gaps) <= gap_max))
    retention = float(np.mean(retained))
    weak = float(np.mean([g3 <= g1 + 1e-12 for g1, g3 in pairs]))
    strict = int(sum(g3 < g1 - 1e-12 for g1, g3 in pairs))
    return {"retention": retention, "retention_passed": retention >= 1 - delta,
            "gaps": gaps, "gap_fraction": gap_ok, "gap_passed": gap_ok >= gap_fraction,
            "vandermonde_pairs": pairs, "dominance_fraction": weak, "strict_wins": strict,
            "dominance_passed": weak >= dominance_fraction,
            "passed": retention >= 1 - delta and gap_ok >= gap_fraction
            and weak >= dominance_fraction}
