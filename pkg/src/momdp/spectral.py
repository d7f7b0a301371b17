"""Structural constants of emission matrices.

Emission matrices here are column-stochastic ``O x S`` arrays (column ``s``
is the observation law of state ``s``). The ``k``-fold tensor power has
``O^k`` rows in lexicographic order of ``(o_1, ..., o_k)`` with ``o_1`` the
most significant digit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

RANK_RTOL = 1e-8
DEFAULT_ROW_CAP = 10**6
EXACT_ENUMERATION_CAP = 10**4
HOEFFDING_CONFIDENCE = 1e-3


class NotRevealingError(ValueError):
    """The tensor-power emission matrix is rank deficient."""

    def __init__(self, rank: int, num_states: int, k: int, h: Optional[int] = None):
        self.rank, self.num_states, self.k, self.h = rank, num_states, k, h
        where = "" if h is None else f" at step {h}"
        super().__init__(f"not {k}-MO-revealing{where}: numerical rank {rank} < S={num_states}")


class ConstructionFailedError(RuntimeError):
    """The test-embedded perturbation is too large to invert safely."""


class SizeCapError(ValueError):
    pass


def one_to_one_norm(B: np.ndarray) -> float:
    """Operator norm from l1 to l1: the largest column l1 norm."""
    B = np.asarray(B, dtype=float)
    return float(np.abs(B).sum(axis=0).max())


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int((sv > rtol * sv[0]).sum())


def pairwise_l1(emission: np.ndarray):
    """Minimum l1 distance between columns of an ``O x S`` matrix and the argmin pair."""
    cols = np.asarray(emission, dtype=float).T
    S = cols.shape[0]
    if S < 2:
        return 2.0, None
    d = np.abs(cols[:, None, :] - cols[None, :, :]).sum(-1)
    iu = np.triu_indices(S, 1)
    i = int(np.argmin(d[iu]))
    return float(d[iu][i]), (int(iu[0][i]), int(iu[1][i]))


@dataclass
class DistinguishabilityReport:
    per_step: np.ndarray
    pairs: list

    @property
    def alpha(self) -> float:
        return float(self.per_step.min())

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "per_step": self.per_step.tolist(),
                "pairs": [None if p is None else list(p) for p in self.pairs]}


def distinguishability(model) -> DistinguishabilityReport:
    values, pairs = [], []
    for h in range(model.horizon):
        a, pair = pairwise_l1(model.emission_matrix(h))
        values.append(a)
        pairs.append(pair)
    return DistinguishabilityReport(np.array(values), pairs)


def tensor_power(emission: np.ndarray, k: int, cap: int = DEFAULT_ROW_CAP) -> np.ndarray:
    """Column-wise ``k``-fold Kronecker power of an ``O x S`` matrix."""
    E = np.asarray(emission, dtype=float)
    O, S = E.shape
    if k < 1:
        raise ValueError("k must be positive")
    if O**k > cap:
        raise SizeCapError(f"O^k = {O}^{k} = {O**k} rows exceeds the cap {cap}")
    out = E
    for _ in range(k - 1):
        out = (out[:, None, :] * E[None, :, :]).reshape(-1, S)
    return out


def tensor_power_emission(model, h: int, k: int, cap: int = DEFAULT_ROW_CAP) -> np.ndarray:
    """``O_h^{(x)k}`` of a model, shape ``(O^k, S)``."""
    return tensor_power(model.emission_matrix(h), k, cap)


@dataclass
class RevealingCertificate:
    """A left inverse ``B`` of ``O_h^{(x)k}`` with its 1->1 norm."""

    k: int
    h: int
    emission: np.ndarray
    matrix: np.ndarray
    left_inverse: np.ndarray
    norm: float
    method: str

    @property
    def alpha(self) -> float:
        """Revealing constant certified by this inverse, ``1 / norm``."""
        return 1.0 / self.norm

    def identity_residual(self) -> float:
        S = self.matrix.shape[1]
        return float(np.abs(self.left_inverse @ self.matrix - np.eye(S)).max())


def _lp_left_inverse(M: np.ndarray) -> np.ndarray:
    """Left inverse of ``M`` minimizing the largest column l1 norm.

    Variables are ``B = P - Q`` with ``P, Q >= 0`` and the bound ``t``.
    """
    N, S = M.shape
    nv = S * N
    eq_block = sparse.kron(sparse.identity(S), sparse.csr_matrix(M.T))
    A_eq = sparse.hstack([eq_block, -eq_block, sparse.csr_matrix((S * S, 1))]).tocsr()
    b_eq = np.eye(S).ravel()
    col_sum = sparse.kron(np.ones((1, S)), sparse.identity(N))
    A_ub = sparse.hstack([col_sum, col_sum, -np.ones((N, 1))]).tocsr()
    c = np.zeros(2 * nv + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(N), A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"left-inverse LP did not solve: {res.message}")
    x = res.x
    return (x[:nv] - x[nv:2 * nv]).reshape(S, N)


def revealing_certificate(model, h: int, k: int, method: str = "pseudo_inverse",
                          cap: int = DEFAULT_ROW_CAP) -> RevealingCertificate:
    """Certify ``(alpha, k)``-MO-revealing at step ``h`` with a left inverse.

    ``pseudo_inverse`` gives an upper bound on the optimal norm;
    ``lp_exact`` solves for the minimal-norm left inverse.
    """
    E = model.emission_matrix(h)
    M = tensor_power(E, k, cap)
    S = M.shape[1]
    rank = numerical_rank(M)
    if rank < S:
        raise NotRevealingError(rank, S, k, h)
    if method == "pseudo_inverse":
        B = np.linalg.pinv(M)
    elif method == "lp_exact":
        B = _lp_left_inverse(M)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RevealingCertificate(k, h, E.copy(), M, B, one_to_one_norm(B), method)


def extend_left_inverse(cert: RevealingCertificate,
                        cap: int = DEFAULT_ROW_CAP) -> RevealingCertificate:
    """Left inverse of ``O^{(x)(k+1)}`` that ignores the last observation.

    ``B'[s, (o_1..o_{k+1})] = B[s, (o_1..o_k)]``; the norm is unchanged.
    """
    O = cert.emission.shape[0]
    if O ** (cert.k + 1) > cap:
        raise SizeCapError(f"O^(k+1) = {O ** (cert.k + 1)} rows exceeds the cap {cap}")
    B = np.repeat(cert.left_inverse, O, axis=1)
    M = tensor_power(cert.emission, cert.k + 1, cap)
    return RevealingCertificate(cert.k + 1, cert.h, cert.emission, M, B,
                                one_to_one_norm(B), cert.method)


# --------------------------------------------------------------------------
# Test-embedded inverse
# --------------------------------------------------------------------------

@dataclass
class TestEmbeddedInverse:
    """Left inverse ``(I + E)^{-1} Y`` built from per-state identity tests.

    ``class_probs[c, s]`` is the probability that a block from state ``s``
    is assigned to ``c``, so ``E = class_probs - I``. In exact mode
    ``Y`` is the full ``S x O^k`` 0/1 matrix; in Monte Carlo mode only the
    estimated ``E`` and its per-entry radius are kept.
    """

    __test__ = False

    k: int
    h: int
    delta: float
    mode: str
    class_probs: np.ndarray
    perturbation: np.ndarray
    entry_radius: float
    samples_per_state: int
    Y: Optional[np.ndarray] = None
    inverse: Optional[np.ndarray] = None
    norm: Optional[float] = None
    y_norm: float = 1.0
    identity_residual: Optional[float] = None

    @property
    def perturbation_norm(self) -> float:
        return one_to_one_norm(self.perturbation)

    def to_dict(self) -> dict:
        return {"k": self.k, "h": self.h, "delta": self.delta, "mode": self.mode,
                "perturbation_norm": self.perturbation_norm, "entry_radius": self.entry_radius,
                "samples_per_state": self.samples_per_state, "norm": self.norm,
                "y_norm": self.y_norm}


def _first_argmin(Z: np.ndarray) -> np.ndarray:
    """Index of the first state attaining ``min_s Z_s``; states on the last axis."""
    return np.argmin(Z, axis=-1)


def _all_sequences(O: int, k: int) -> np.ndarray:
    grids = np.indices((O,) * k).reshape(k, -1).T
    return grids


def test_embedded_inverse(model, h: int, k: int, delta: Optional[float] = None,
                          exact_cap: int = EXACT_ENUMERATION_CAP, mc_samples: int = 20_000,
                          seed=0, max_perturbation: float = 1.0) -> TestEmbeddedInverse:
    """Build ``Y_h`` from identity tests and invert ``Y_h O_h^{(x)k} = I + E``.

    ``Z_s`` is 1 when the identity test rejects column ``s``; each block goes
    to the first state with minimal ``Z``. ``delta`` defaults to
    ``1 / (2 S^2)``. Exact enumeration runs when ``O^k <= exact_cap``;
    otherwise ``E`` is estimated from ``mc_samples`` simulated blocks per
    state with Hoeffding radius at confidence ``1e-3``.
    """
    from .dist_testing import state_identity_tester

    E_cols = model.emission_matrix(h)
    O, S = E_cols.shape
    delta = 1.0 / (2 * S * S) if delta is None else delta
    testers = [state_identity_tester(model, h, s, k, delta) for s in range(S)]
    M, b = testers[0].num_blocks, testers[0].block_size

    def classify(chunk_counts):
        Z = np.stack([t.rejects_counts(chunk_counts) for t in testers], axis=-1)
        return _first_argmin(Z.astype(int))

    Y = None
    if O**k <= exact_cap:
        seqs = _all_sequences(O, k)
        cls = classify(testers[0].chunk_counts(seqs))
        Y = np.zeros((S, O**k))
        Y[cls, np.arange(O**k)] = 1.0
        class_probs = Y @ tensor_power(E_cols, k)
        mode, radius, n = "exact", 0.0, 0
    else:
        rng = np.random.default_rng(seed)
        n = int(mc_samples)
        class_probs = np.zeros((S, S))
        for s in range(S):
            counts = rng.multinomial(b, E_cols[:, s], size=(n, M))
            cls = classify(counts)
            class_probs[:, s] = np.bincount(cls, minlength=S) / n
        mode = "monte_carlo"
        radius = math.sqrt(math.log(2.0 / HOEFFDING_CONFIDENCE) / (2.0 * n))
    pert = class_probs - np.eye(S)
    result = TestEmbeddedInverse(k=k, h=h, delta=delta, mode=mode, class_probs=class_probs,
                                 perturbation=pert, entry_radius=radius, samples_per_state=n, Y=Y)
    if result.perturbation_norm >= max_perturbation:
        raise ConstructionFailedError(
            f"||E||_1->1 = {result.perturbation_norm:.4f} >= {max_perturbation} at k={k}; "
            "the identity tests are unreliable, increase k")
    try:
        inv_core = np.linalg.inv(np.eye(S) + pert)
    except np.linalg.LinAlgError as exc:
        raise ConstructionFailedError(f"Y O^(x)k is singular at k={k}") from exc
    # Y has exactly one 1 per column, so the columns of (I+E)^{-1} Y are
    # columns of (I+E)^{-1} for the classes that actually occur.
    if Y is not None:
        result.inverse = inv_core @ Y
        result.norm = one_to_one_norm(result.inverse)
        result.y_norm = one_to_one_norm(Y)
        result.identity_residual = float(
            np.abs(result.inverse @ tensor_power(E_cols, k) - np.eye(S)).max())
    else:
        result.norm = one_to_one_norm(inv_core)
    return result


test_embedded_inverse.__test__ = False


def minimal_certifying_k(model, h: int, k_max: int = 4096, delta: Optional[float] = None,
                         target: float = 2.0, rel_tol: float = 0.0, **kw):
    """Smallest ``k`` (doubling then bisection) whose test-embedded norm is ``<= target``.

    Bisection stops once the bracket is within ``rel_tol`` of its upper
    end, so the result is minimal up to that relative precision.
    Returns ``(k, TestEmbeddedInverse)``.
    """
    cache = {}

    def attempt(k):
        if k not in cache:
            try:
                res = test_embedded_inverse(model, h, k, delta, **kw)
                cache[k] = res if res.norm <= target + 1e-6 else None
            except ConstructionFailedError:
                cache[k] = None
        return cache[k]

    lo, hi = 1, 1
    while attempt(hi) is None:
        lo = hi + 1
        hi *= 2
        if hi > k_max:
            raise ConstructionFailedError(f"no k <= {k_max} certifies norm <= {target}")
    while lo < hi and hi - lo > rel_tol * hi:
        mid = (lo + hi) // 2
        if attempt(mid) is not None:
            hi = mid
        else:
            lo = mid + 1
    return hi, attempt(hi)


def analysis_report(model, k_max: int, lp_cap: int = 256) -> dict:
    """Per-step distinguishability and a per-``(h, k)`` rank and norm table."""
    report = distinguishability(model)
    rows = []
    for h in range(model.horizon):
        E = model.emission_matrix(h)
        for k in range(1, k_max + 1):
            row = {"h": h, "k": k, "rank": None, "full_rank": None,
                   "norm_pinv": None, "norm_lp": None}
            if E.shape[0] ** k > DEFAULT_ROW_CAP:
                row["skipped"] = "size cap"
                rows.append(row)
                continue
            M = tensor_power(E, k)
            row["rank"] = numerical_rank(M)
            row["full_rank"] = row["rank"] == M.shape[1]
            if row["full_rank"]:
                row["norm_pinv"] = revealing_certificate(model, h, k, "pseudo_inverse").norm
                if M.shape[0] <= lp_cap:
                    row["norm_lp"] = revealing_certificate(model, h, k, "lp_exact").norm
            rows.append(row)
    S, A, O, H = model.dims
    return {"S": S, "A": A, "O": O, "H": H, "distinguishability": report.to_dict(),
            "table": rows}
