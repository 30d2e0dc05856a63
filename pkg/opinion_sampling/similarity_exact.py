# opinion_sampling/similarity_exact.py
"""
Exact steady-state opinion correlations and similarities.

  Q   absorption probabilities, (I - (I-P) D^-1 A) Q = P
  M   meeting values, M_ij = sum_l Pr[walkers from i, j first meet at l] * h_l,
      h_l = 1 - sum_k Q_lk^2
  rho = Q Q^T + M
  sigma = 1 - 2 mu0 (1 - mu0) (1 - rho)

By linearity the per-l meeting probabilities and their h-weighted aggregate obey the same pair
recurrence, the aggregate with boundary M_ii = h_i. That reduces n^3 unknowns to n^2 and one
sweep costs O(nm). Both fixed-point iterations contract because every row of (I-P) D^-1 A sums
to 1 - p_i < 1.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from opinion_sampling.graph_core import SimilarityMatrix, SocialGraph

logger = logging.getLogger("SimilaritySolver")

BRUTE_FORCE_MAX_N = 12
# entries of rho may sit this far outside [0, 1] before clamping
RANGE_TOL = 1e-8


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), sweeps: int = 0):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_sweeps: int = 10_000
    method: str = "iterative"        # Q: "iterative" | "direct"
    schedule: str = "auto"           # M: "gauss_seidel" | "jacobi" | "direct" | "auto"
    direct_max_n: int = 500
    gauss_seidel_max_n: int = 16

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if self.method not in ("iterative", "direct"):
            raise ValueError(f"unknown Q method {self.method!r}")
        if self.schedule not in ("gauss_seidel", "jacobi", "direct", "auto"):
            raise ValueError(f"unknown meeting-value schedule {self.schedule!r}")

    def resolved_schedule(self, n: int) -> str:
        if self.schedule != "auto":
            return self.schedule
        return "gauss_seidel" if n <= self.gauss_seidel_max_n else "jacobi"


@dataclass(frozen=True, eq=False)
class AbsorptionMatrix:
    Q: np.ndarray
    sweeps: int = 0


@dataclass(frozen=True, eq=False)
class MeetingValues:
    M: np.ndarray
    h: np.ndarray
    sweeps: int = 0


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    rho: np.ndarray

    @property
    def n(self) -> int:
        return self.rho.shape[0]


# ---------- Q ----------
def compute_Q(g: SocialGraph, cfg: Optional[SolverConfig] = None) -> AbsorptionMatrix:
    cfg = cfg or SolverConfig()
    P = np.diag(g.inward)
    T = g.transition()
    if cfg.method == "direct":
        if g.n > cfg.direct_max_n:
            raise SolverError(f"direct solve limited to n <= {cfg.direct_max_n}, got n={g.n}")
        Q = scipy.linalg.solve(np.eye(g.n) - T.toarray(), P)
        return _checked_Q(AbsorptionMatrix(Q, 0), g, cfg)

    X = P.copy()
    residual = float("inf")
    for sweep in range(1, cfg.max_sweeps + 1):
        X_new = P + T @ X
        residual = float(np.max(np.abs(X_new - X)))
        X = X_new
        if residual < cfg.tol:
            logger.debug(f"Q converged after {sweep} sweeps (residual {residual:.2e})")
            return _checked_Q(AbsorptionMatrix(X, sweep), g, cfg)
    raise SolverError(f"Q iteration did not converge in {cfg.max_sweeps} sweeps "
                      f"(residual {residual:.3e})", residual, cfg.max_sweeps)


def _checked_Q(result: AbsorptionMatrix, g: SocialGraph, cfg: SolverConfig) -> AbsorptionMatrix:
    Q = result.Q
    rows = Q.sum(axis=1)
    # error left after the last sweep is bounded by residual / min_i p_i per entry
    slack = max(g.n * cfg.tol / float(g.inward.min()), 1e-9)
    if np.max(np.abs(rows - 1.0)) > slack:
        raise SolverError(f"Q rows do not sum to 1 (max deviation {np.max(np.abs(rows - 1.0)):.3e})")
    Q = np.clip(Q, 0.0, 1.0)
    Q.flags.writeable = False
    return AbsorptionMatrix(Q, result.sweeps)


# ---------- M ----------
def _h(Q: AbsorptionMatrix) -> np.ndarray:
    return 1.0 - np.sum(Q.Q ** 2, axis=1)


def compute_meeting_values(g: SocialGraph, Q: AbsorptionMatrix, cfg: Optional[SolverConfig] = None) -> MeetingValues:
    cfg = cfg or SolverConfig()
    if Q.Q.shape != (g.n, g.n):
        raise ValueError(f"Q has shape {Q.Q.shape}, expected {(g.n, g.n)}")
    schedule = cfg.resolved_schedule(g.n)
    if schedule == "direct":
        return compute_meeting_values_direct(g, Q)
    h = _h(Q)
    if schedule == "gauss_seidel":
        M, sweeps = _sweep_gauss_seidel(g, h, cfg)
    else:
        M, sweeps = _sweep_jacobi(g, h, cfg)
    logger.debug(f"Meeting values converged after {sweeps} {schedule} sweeps (n={g.n})")
    M = np.clip((M + M.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(M, h)
    M.flags.writeable = False
    return MeetingValues(M, h, sweeps)


def _sweep_gauss_seidel(g: SocialGraph, h: np.ndarray, cfg: SolverConfig) -> Tuple[np.ndarray, int]:
    """In-place pair updates in fixed (i < j) order."""
    n = g.n
    lam = g.lam
    T = g.transition()
    rows = [(T.indices[T.indptr[i]:T.indptr[i + 1]], T.data[T.indptr[i]:T.indptr[i + 1]]) for i in range(n)]
    M = np.diag(h).astype(float)
    residual = float("inf")
    for sweep in range(1, cfg.max_sweeps + 1):
        residual = 0.0
        for i in range(n):
            nb_i, w_i = rows[i]
            for j in range(i + 1, n):
                nb_j, w_j = rows[j]
                total = lam[i] + lam[j]
                val = (lam[i] * (w_i @ M[nb_i, j]) + lam[j] * (w_j @ M[i, nb_j])) / total
                change = abs(val - M[i, j])
                if change > residual:
                    residual = change
                M[i, j] = M[j, i] = val
        if residual < cfg.tol:
            return M, sweep
    raise SolverError(f"meeting values did not converge in {cfg.max_sweeps} sweeps "
                      f"(residual {residual:.3e})", residual, cfg.max_sweeps)


def _sweep_jacobi(g: SocialGraph, h: np.ndarray, cfg: SolverConfig) -> Tuple[np.ndarray, int]:
    """Simultaneous update M <- L o (T M) + L^T o (M T^T), diagonal pinned to h."""
    lam = g.lam
    T = g.transition()
    L = lam[:, None] / (lam[:, None] + lam[None, :])
    M = np.diag(h).astype(float)
    residual = float("inf")
    for sweep in range(1, cfg.max_sweeps + 1):
        TM = np.asarray(T @ M)
        M_new = L * TM + L.T * TM.T
        np.fill_diagonal(M_new, h)
        residual = float(np.max(np.abs(M_new - M)))
        M = M_new
        if residual < cfg.tol:
            return M, sweep
    raise SolverError(f"meeting values did not converge in {cfg.max_sweeps} sweeps "
                      f"(residual {residual:.3e})", residual, cfg.max_sweeps)


def _pair_system(g: SocialGraph) -> sp.csr_matrix:
    """
    Row-major vec(M) operator of the pair recurrence, off-diagonal rows only valid.

    (lam_i + lam_j) M_ij - lam_i (T M)_ij - lam_j (M T^T)_ij is the Kronecker sum of
    B = Lam (I - T) with itself.
    """
    n = g.n
    B = sp.diags(g.lam) @ (sp.identity(n) - g.transition())
    I = sp.identity(n)
    return sp.csr_matrix(sp.kron(B, I) + sp.kron(I, B))


def _with_diagonal_boundary(K: sp.csr_matrix, n: int) -> sp.csr_matrix:
    diag_idx = np.arange(n) * (n + 1)
    keep = np.ones(n * n)
    keep[diag_idx] = 0.0
    pinned = np.zeros(n * n)
    pinned[diag_idx] = 1.0
    return sp.csr_matrix(sp.diags(keep) @ K + sp.diags(pinned))


def compute_meeting_values_direct(g: SocialGraph, Q: AbsorptionMatrix) -> MeetingValues:
    """Sparse direct solve of the n^2-unknown meeting system (moderate n only)."""
    n = g.n
    h = _h(Q)
    A = _with_diagonal_boundary(_pair_system(g), n)
    rhs = np.zeros(n * n)
    rhs[np.arange(n) * (n + 1)] = h
    M = scipy.sparse.linalg.spsolve(A.tocsc(), rhs).reshape(n, n)
    M = np.clip((M + M.T) / 2.0, 0.0, 1.0)
    np.fill_diagonal(M, h)
    M.flags.writeable = False
    return MeetingValues(M, h, 0)


def compute_meeting_probs_bruteforce(g: SocialGraph) -> np.ndarray:
    """
    Pr[I_ij^l] for all (i, j, l) as an (n, n, n) array indexed [i, j, l], by dense direct solve.

    Boundary: Pr = 1 when i = j = l, Pr = 0 when i = j != l.
    """
    n = g.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute-force meeting probabilities limited to n <= {BRUTE_FORCE_MAX_N}, got n={n}")
    A = _with_diagonal_boundary(_pair_system(g), n).toarray()
    rhs = np.zeros((n * n, n))
    diag_idx = np.arange(n) * (n + 1)
    rhs[diag_idx, np.arange(n)] = 1.0
    X = scipy.linalg.solve(A, rhs)
    probs = X.reshape(n, n, n)
    return (probs + probs.transpose(1, 0, 2)) / 2.0


def aggregate_meeting_probs(probs: np.ndarray, Q: AbsorptionMatrix) -> np.ndarray:
    """sum_l Pr[I_ij^l] h_l."""
    return probs @ _h(Q)


# ---------- rho / sigma ----------
def correlation(Q: AbsorptionMatrix, M: MeetingValues) -> CorrelationMatrix:
    if Q.Q.shape != M.M.shape:
        raise ValueError(f"shape mismatch: Q {Q.Q.shape} vs M {M.M.shape}")
    rho = Q.Q @ Q.Q.T + M.M
    rho = (rho + rho.T) / 2.0
    diag_err = float(np.max(np.abs(np.diag(rho) - 1.0)))
    if diag_err > 1e-12:
        raise SolverError(f"correlation diagonal deviates from 1 by {diag_err:.3e}")
    low, high = float(rho.min()), float(rho.max())
    if low < -RANGE_TOL or high > 1.0 + RANGE_TOL:
        raise SolverError(f"correlation outside [0, 1] beyond tolerance (min {low:.3e}, max {high:.6f})")
    rho = np.clip(rho, 0.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    rho.flags.writeable = False
    return CorrelationMatrix(rho)


def similarity(rho: CorrelationMatrix, mu0: float) -> SimilarityMatrix:
    if not 0.0 <= mu0 <= 1.0:
        raise ValueError(f"mu0 must be in [0, 1], got {mu0}")
    return SimilarityMatrix(1.0 - 2.0 * mu0 * (1.0 - mu0) * (1.0 - rho.rho))


def opinion_similarities(g: SocialGraph, mu0: float, cfg: Optional[SolverConfig] = None,
                         ) -> Tuple[SimilarityMatrix, CorrelationMatrix]:
    cfg = cfg or SolverConfig()
    Q = compute_Q(g, cfg)
    M = compute_meeting_values(g, Q, cfg)
    rho = correlation(Q, M)
    logger.info(f"Exact similarities: n={g.n} m={g.m} Q sweeps={Q.sweeps} M sweeps={M.sweeps}")
    return similarity(rho, mu0), rho
