"""Greedy sparse coding (OMP) and K-SVD dictionary learning.

A dictionary is a plain ``(N, K)`` float array whose columns are unit-norm
atoms. Codes are held in :class:`SparseCodes`, a column-compressed matrix
that keeps exactly the selected support of every column.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from dualsparse.errors import ContractError, DegenerateDataError, DimensionError, TerminationError
from dualsparse.patches import PatchMatrix

UNIT_NORM_TOL = 1e-9
# Relative residual floor so that eps=0 terminates once x is reproduced to rounding.
RESIDUAL_FLOOR = 1e-10


class UnderdeterminedWarning(UserWarning):
    """More atoms requested than training columns available."""


@dataclass
class SparseConfig:
    """Sparse-coding and learning parameters.

    ``epsilon`` is a per-pixel RMS tolerance: a column is done once
    ``||x - D a||_2 <= epsilon * sqrt(N)``. ``max_support=None`` leaves
    the support uncapped (bounded only by ``min(N, K)``).
    """

    epsilon: float = 0.0
    max_support: int | None = None
    learn_iters: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_support is not None and self.max_support < 1:
            raise ValueError(f"max_support must be >= 1, got {self.max_support}")
        if self.learn_iters < 0:
            raise ValueError(f"learn_iters must be >= 0, got {self.learn_iters}")


@dataclass
class SparseCodes:
    """``K x M`` coefficient matrix in compressed-column form.

    Attributes:
        matrix: ``scipy.sparse.csc_array``; stored entries are the OMP support.
        capped: per-column flag, true when the support cap stopped the pursuit
            before the residual target was met.
    """

    matrix: sparse.csc_array
    capped: np.ndarray = field(default=None)

    def __post_init__(self):
        self.matrix = sparse.csc_array(self.matrix)
        if self.capped is None:
            self.capped = np.zeros(self.matrix.shape[1], dtype=bool)
        self.capped = np.asarray(self.capped, dtype=bool)
        if self.capped.shape != (self.matrix.shape[1],):
            raise DimensionError("capped flags must have one entry per column")

    @classmethod
    def from_dense(cls, A, capped=None) -> "SparseCodes":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise DimensionError(f"codes must be 2-D, got shape {A.shape}")
        return cls(sparse.csc_array(A), capped)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_atoms(self) -> int:
        return self.matrix.shape[0]

    @property
    def count(self) -> int:
        return self.matrix.shape[1]

    def support_sizes(self) -> np.ndarray:
        """``||alpha_m||_0`` for every column, counted on stored entries."""
        m = self.matrix
        nz = m.data != 0
        cols = np.repeat(np.arange(m.shape[1]), np.diff(m.indptr))
        return np.bincount(cols[nz], minlength=m.shape[1])

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def row(self, k: int) -> np.ndarray:
        """Dense coefficient row ``beta_k`` (usage of atom ``k`` across columns)."""
        return self.matrix[[k], :].toarray().ravel()

    def select_rows(self, rows) -> "SparseCodes":
        rows = np.asarray(rows, dtype=np.intp)
        return SparseCodes(sparse.csc_array(self.matrix.tocsr()[rows, :]), self.capped.copy())

    def select_columns(self, cols) -> "SparseCodes":
        cols = np.asarray(cols, dtype=np.intp)
        return SparseCodes(self.matrix[:, cols], self.capped[cols])


def _as_data(X) -> np.ndarray:
    if isinstance(X, PatchMatrix):
        return X.data
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError(f"data must be an N x M matrix, got shape {X.shape}")
    return X


def check_dictionary(D) -> np.ndarray:
    """Return ``D`` as float64 after verifying that every atom is unit-norm."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] < 1:
        raise DimensionError(f"dictionary must be N x K with K >= 1, got shape {D.shape}")
    norms = np.linalg.norm(D, axis=0)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
    if bad.size:
        raise ContractError(f"atom {bad[0]} has norm {norms[bad[0]]:.12g}, expected 1")
    return D


def normalize_columns(M: np.ndarray) -> np.ndarray:
    return M / np.linalg.norm(M, axis=0, keepdims=True)


def _support_cap(cfg: SparseConfig, N: int, K: int) -> tuple[int, bool]:
    limit = min(N, K)
    if cfg.max_support is None or cfg.max_support >= limit:
        return limit, False
    return cfg.max_support, True


def omp_encode(D, x, cfg: SparseConfig) -> np.ndarray:
    """Orthogonal matching pursuit for a single signal.

    Selects the atom most correlated with the residual, refits all selected
    coefficients by least squares, and stops when the residual norm drops to
    ``epsilon * sqrt(N)`` or the support cap is reached.

    Returns:
        Dense length-``K`` coefficient vector.

    Raises:
        ContractError: atoms are not unit-norm.
        TerminationError: no cap is set and the support is exhausted without
            meeting the tolerance.
    """
    D = check_dictionary(D)
    x = np.asarray(x, dtype=np.float64).ravel()
    N, K = D.shape
    if x.size != N:
        raise DimensionError(f"signal length {x.size} does not match atom length {N}")
    if not np.all(np.isfinite(x)):
        raise ContractError("signal contains non-finite values")

    tol = max(cfg.epsilon * np.sqrt(N), RESIDUAL_FLOOR * np.linalg.norm(x))
    cap, is_user_cap = _support_cap(cfg, N, K)
    alpha = np.zeros(K)
    residual = x.copy()
    support: list[int] = []
    while np.linalg.norm(residual) > tol:
        if len(support) >= cap:
            if is_user_cap:
                break
            raise TerminationError(
                f"support reached {len(support)} atoms with residual {np.linalg.norm(residual):.6g} > {tol:.6g}"
            )
        corr = np.abs(D.T @ residual)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        Ds = D[:, support]
        coef = np.linalg.lstsq(Ds, x, rcond=None)[0]
        residual = x - Ds @ coef
    if support:
        alpha[support] = coef
    return alpha


def _solve_batched(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(G, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return (np.linalg.pinv(G) @ b[..., None])[..., 0]


def encode_all(D, X, cfg: SparseConfig) -> SparseCodes:
    """OMP applied to every column of ``X``.

    Columns are processed together, one support atom per pass, which gives the
    same result as calling :func:`omp_encode` on each column.
    """
    D = check_dictionary(D)
    X = _as_data(X)
    N, K = D.shape
    if X.shape[0] != N:
        raise DimensionError(f"data rows {X.shape[0]} do not match atom length {N}")
    bad = np.flatnonzero(~np.all(np.isfinite(X), axis=0))
    if bad.size:
        raise ContractError(f"column {bad[0]} contains non-finite values")
    M = X.shape[1]
    cap, is_user_cap = _support_cap(cfg, N, K)
    tol = np.maximum(cfg.epsilon * np.sqrt(N), RESIDUAL_FLOOR * np.linalg.norm(X, axis=0))

    G = D.T @ D
    DtX = D.T @ X
    R = X.copy()
    supports = np.zeros((M, cap), dtype=np.intp)
    coefs = np.zeros((M, cap))
    size = np.zeros(M, dtype=np.intp)
    active = np.flatnonzero(np.linalg.norm(R, axis=0) > tol)
    t = 0
    while active.size:
        if t >= cap:
            if not is_user_cap:
                raise TerminationError(
                    f"column {active[0]}: support reached {t} atoms without meeting the residual tolerance"
                )
            break
        corr = np.abs(D.T @ R[:, active])
        if t:
            corr[supports[active, :t].T, np.arange(active.size)] = -1.0
        supports[active, t] = np.argmax(corr, axis=0)
        t += 1
        S = supports[active, :t]
        coef = _solve_batched(G[S[:, :, None], S[:, None, :]], np.take_along_axis(DtX[:, active].T, S, axis=1))
        coefs[active, :t] = coef
        size[active] = t
        R[:, active] = X[:, active] - np.einsum("nmt,mt->nm", D[:, S], coef)
        active = active[np.linalg.norm(R[:, active], axis=0) > tol[active]]

    capped = np.zeros(M, dtype=bool)
    capped[active] = True
    indptr = np.concatenate([[0], np.cumsum(size)])
    mask = np.arange(cap)[None, :] < size[:, None]
    matrix = sparse.csc_array((coefs[mask], supports[mask], indptr), shape=(K, M))
    matrix.has_sorted_indices = False
    matrix.sort_indices()
    return SparseCodes(matrix, capped)


def reconstruct(D, codes) -> np.ndarray:
    """Dense product ``D @ A``."""
    D = np.asarray(D, dtype=np.float64)
    A = codes.matrix if isinstance(codes, SparseCodes) else codes
    if D.ndim != 2 or D.shape[1] != A.shape[0]:
        raise DimensionError(f"dictionary shape {D.shape} incompatible with codes shape {A.shape}")
    out = A.T @ D.T if sparse.issparse(A) else (D @ np.asarray(A, dtype=np.float64)).T
    return np.asarray(out).T.copy()


def init_dictionary(X, n_atoms: int, seed: int = 0) -> np.ndarray:
    """Seeded dictionary initialization from normalized data columns.

    Distinct nonzero columns are drawn without replacement. When fewer than
    ``n_atoms`` exist, the pool is cycled and each repeat is jittered before
    normalization so no two atoms coincide.
    """
    X = _as_data(X)
    if n_atoms < 1:
        raise ValueError(f"atom count must be >= 1, got {n_atoms}")
    norms = np.linalg.norm(X, axis=0)
    pool = np.flatnonzero(norms > 0)
    if pool.size == 0:
        raise DegenerateDataError("cannot initialize a dictionary from all-zero data")
    rng = np.random.default_rng(seed)
    if pool.size >= n_atoms:
        pick = rng.choice(pool, size=n_atoms, replace=False)
        return normalize_columns(X[:, pick])
    order = rng.permutation(pool)
    pick = np.resize(order, n_atoms)
    atoms = normalize_columns(X[:, pick])
    repeats = np.arange(n_atoms) >= pool.size
    atoms[:, repeats] += 0.1 * rng.standard_normal((X.shape[0], int(repeats.sum())))
    return normalize_columns(atoms)


def rank_one(E: np.ndarray, start=None, tol: float = 1e-10, max_iter: int = 1000):
    """Dominant singular triple of ``E`` by power iteration on ``E @ E.T``.

    Starting from ``start`` (e.g. the current atom) makes ``||E.T @ u||``
    non-decreasing over the iterations.

    Returns:
        ``(u, s, v)`` with unit ``u``, ``v`` and ``E ~ s * outer(u, v)``.
    """
    B = E @ E.T
    u = np.ones(E.shape[0]) if start is None else np.asarray(start, dtype=np.float64).copy()
    nrm = np.linalg.norm(u)
    if nrm == 0 or np.linalg.norm(B @ u) == 0:
        U, S, Vt = np.linalg.svd(E, full_matrices=False)
        return U[:, 0], S[0], Vt[0]
    u /= nrm
    for _ in range(max_iter):
        w = B @ u
        w /= np.linalg.norm(w)
        done = np.linalg.norm(w - u) <= tol
        u = w
        if done:
            break
    g = E.T @ u
    s = np.linalg.norm(g)
    v = g / s if s > 0 else g
    return u, s, v


def update_atom(X: np.ndarray, D: np.ndarray, A: np.ndarray, E: np.ndarray, k: int, taken=None) -> None:
    """One K-SVD atom update, in place on ``D``, ``A`` and the residual ``E = X - D A``.

    The support of row ``k`` is kept fixed. An unused atom is replaced by the
    normalized data column with the largest residual; ``taken`` (boolean per
    column) prevents two atoms from picking the same column in one sweep.
    """
    omega = np.flatnonzero(A[k])
    if omega.size == 0:
        scores = np.einsum("ij,ij->j", E, E)
        scores[np.linalg.norm(X, axis=0) == 0] = -np.inf
        if taken is not None:
            scores[taken] = -np.inf
        j = int(np.argmax(scores))
        if not np.isfinite(scores[j]):
            return
        if taken is not None:
            taken[j] = True
        D[:, k] = X[:, j] / np.linalg.norm(X[:, j])
        return
    Ek = E[:, omega] + np.outer(D[:, k], A[k, omega])
    u, s, v = rank_one(Ek, start=D[:, k])
    if s == 0:
        return
    D[:, k] = u
    A[k, omega] = s * v
    E[:, omega] = Ek - np.outer(u, A[k, omega])


def dictionary_update(X: np.ndarray, D: np.ndarray, A: np.ndarray) -> None:
    """Sequential K-SVD sweep over all atoms (in place)."""
    E = X - D @ A
    taken = np.zeros(X.shape[1], dtype=bool)
    for k in range(D.shape[1]):
        update_atom(X, D, A, E, k, taken)


def ksvd_learn(X, n_atoms: int, cfg: SparseConfig, init: np.ndarray | None = None):
    """Learn a dictionary by alternating OMP coding and K-SVD atom updates.

    Args:
        X: ``(N, M)`` training matrix or :class:`PatchMatrix`.
        n_atoms: number of atoms ``K``.
        cfg: tolerance, cap, sweep count and seed.
        init: optional starting dictionary (unit-norm columns).

    Returns:
        ``(D, codes)``: the learned unit-norm dictionary and the codes of ``X``
        on it after the final sweep.
    """
    X = _as_data(X)
    M = X.shape[1]
    if M < 1 or n_atoms < 1:
        raise ValueError("need at least one column and one atom")
    if not np.any(X):
        raise DegenerateDataError("training data is all zero")
    if n_atoms > M:
        warnings.warn(
            f"learning {n_atoms} atoms from {M} columns is under-determined", UnderdeterminedWarning, stacklevel=2
        )
    D = init_dictionary(X, n_atoms, cfg.seed) if init is None else check_dictionary(init).copy()
    for _ in range(cfg.learn_iters):
        A = encode_all(D, X, cfg).toarray()
        dictionary_update(X, D, A)
        D = normalize_columns(D)
    return D, encode_all(D, X, cfg)
