"""Sparse lower-triangular Cholesky factors of precision matrices.

The Gaussian variational family is parameterized through the precision
matrix Omega = T T^t with T lower triangular.  For two-tier hierarchical
models (local blocks b_1..b_n followed by a global tail) the conditional
independence structure makes T block banded: diagonal blocks, sub-diagonal
blocks up to the Markov order, and dense global rows.  This module owns
that pattern, the factor storage, triangular solves and the log-diagonal
reparameterization that keeps T_ii positive during stochastic optimization.

Patterns and factors are immutable value types; solves never mutate them.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse

# exp(STAR_DIAG_FLOOR) is the smallest diagonal we allow; anything lower is
# clamped so the factor never underflows to an exactly singular matrix.
STAR_DIAG_FLOOR = -700.0
SINGULAR_TOL = 1e-300
# Factors up to this dimension solve through a cached dense matrix (LAPACK);
# larger factors go through scipy.sparse triangular solves, linear in nnz.
DENSE_SOLVE_CUTOFF = 400


class SingularFactorError(ValueError):
    """Raised when a triangular solve meets a factor with underflowed diagonal."""


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    """Lower-triangular nonzero positions of a block-banded factor.

    Nonzeros are stored column-major within the lower triangle (sorted by
    column, then row) and this ordering is fixed for the lifetime of the
    pattern so optimizer state vectors stay aligned across iterations.
    """

    kind: str  # "blocks" or "dense"
    n_blocks: int
    block_dims: tuple[int, ...]
    global_dim: int
    markov_order: int
    dim: int
    rows: np.ndarray
    cols: np.ndarray

    @property
    def nnz(self) -> int:
        return self.rows.size

    @cached_property
    def diag_slots(self) -> np.ndarray:
        """Slots (indices into the nonzero vector) holding diagonal entries."""
        return np.flatnonzero(self.rows == self.cols)

    @cached_property
    def slot_of(self) -> np.ndarray:
        """Dense (dim, dim) map position -> slot, -1 off pattern."""
        m = np.full((self.dim, self.dim), -1, dtype=np.int64)
        m[self.rows, self.cols] = np.arange(self.nnz)
        return m

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "n_blocks": self.n_blocks,
            "block_dims": list(self.block_dims),
            "global_dim": self.global_dim,
            "markov_order": self.markov_order,
            "dim": self.dim,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "SparsityPattern":
        if desc["kind"] == "dense":
            return build_dense_pattern(desc["dim"])
        return build_pattern(
            desc["n_blocks"],
            list(desc["block_dims"]),
            desc["global_dim"],
            desc["markov_order"],
        )


def _sorted_pattern(rows, cols):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((rows, cols))  # column-major within the lower triangle
    return rows[order], cols[order]


def build_pattern(n_blocks: int, block_dims, global_dim: int, markov_order: int) -> SparsityPattern:
    """Block-banded lower-triangular pattern for n local blocks plus a global tail.

    Positions are exactly: lower triangles of the diagonal blocks T_ii, full
    sub-diagonal blocks T_ij for 1 <= i-j <= markov_order, the global rows
    T_Gj and the lower triangle of T_GG.
    """
    block_dims = tuple(int(b) for b in block_dims)
    if n_blocks != len(block_dims):
        raise ValueError(f"n_blocks={n_blocks} but {len(block_dims)} block dims given")
    if n_blocks < 1 or any(b < 1 for b in block_dims):
        raise ValueError("need at least one local block and all block dims >= 1")
    if global_dim < 0:
        raise ValueError("global_dim must be >= 0")
    if markov_order < 0:
        raise ValueError("markov_order must be >= 0")
    if markov_order >= n_blocks:
        raise ValueError(f"markov_order={markov_order} must be < n_blocks={n_blocks}")

    offsets = np.concatenate([[0], np.cumsum(block_dims)]).astype(int)
    g_off = int(offsets[-1])
    dim = g_off + int(global_dim)

    rows, cols = [], []

    def add_block(r0, r1, c0, c1, tri=False):
        for c in range(c0, c1):
            lo = max(r0, c) if tri else r0
            for r in range(lo, r1):
                rows.append(r)
                cols.append(c)

    for i in range(n_blocks):
        add_block(offsets[i], offsets[i + 1], offsets[i], offsets[i + 1], tri=True)
        for j in range(max(0, i - markov_order), i):
            add_block(offsets[i], offsets[i + 1], offsets[j], offsets[j + 1])
    if global_dim > 0:
        for j in range(n_blocks):
            add_block(g_off, dim, offsets[j], offsets[j + 1])
        add_block(g_off, dim, g_off, dim, tri=True)

    r, c = _sorted_pattern(rows, cols)
    return SparsityPattern(
        kind="blocks",
        n_blocks=n_blocks,
        block_dims=block_dims,
        global_dim=int(global_dim),
        markov_order=int(markov_order),
        dim=dim,
        rows=r,
        cols=c,
    )


def build_dense_pattern(dim: int) -> SparsityPattern:
    """Full lower triangle; fallback when the precision has no sparse structure."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rows, cols = [], []
    for c in range(dim):
        for r in range(c, dim):
            rows.append(r)
            cols.append(c)
    r, c = _sorted_pattern(rows, cols)
    return SparsityPattern(
        kind="dense",
        n_blocks=1,
        block_dims=(dim,),
        global_dim=0,
        markov_order=0,
        dim=dim,
        rows=r,
        cols=c,
    )


def vech_gather(mat: np.ndarray, pattern: SparsityPattern):
    """Collect pattern positions of a (dim, dim) matrix into a slot vector.

    Returns (vec, n_dropped) where n_dropped counts nonzero entries of `mat`
    lying outside the pattern (they are silently dropped from the vector).
    """
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (pattern.dim, pattern.dim):
        raise ValueError(f"matrix shape {mat.shape} does not match pattern dim {pattern.dim}")
    vec = mat[pattern.rows, pattern.cols].copy()
    on_pattern = np.zeros_like(mat, dtype=bool)
    on_pattern[pattern.rows, pattern.cols] = True
    n_dropped = int(np.count_nonzero(mat[~on_pattern]))
    return vec, n_dropped


def vech_scatter(vec: np.ndarray, pattern: SparsityPattern) -> np.ndarray:
    """Inverse of gather: zero matrix with `vec` written at pattern positions."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (pattern.nnz,):
        raise ValueError(f"vector length {vec.shape} does not match pattern nnz {pattern.nnz}")
    mat = np.zeros((pattern.dim, pattern.dim))
    mat[pattern.rows, pattern.cols] = vec
    return mat


class CholFactor:
    """Lower-triangular factor T with values aligned to a SparsityPattern.

    `values` hold the entries of T; `star_values` hold the same layout for
    T* where diagonal entries store log(T_ii).  Both views are kept in sync
    at construction; factors are treated as immutable afterwards.
    """

    __slots__ = ("pattern", "values", "star_values", "_dense", "_csr", "_csr_t")

    def __init__(self, pattern: SparsityPattern, values: np.ndarray, star_values: np.ndarray):
        self.pattern = pattern
        self.values = values
        self.star_values = star_values
        self._dense = None
        self._csr = None
        self._csr_t = None

    @classmethod
    def from_values(cls, pattern: SparsityPattern, values) -> "CholFactor":
        values = np.asarray(values, dtype=float).copy()
        if values.shape != (pattern.nnz,):
            raise ValueError(f"values length {values.size} != pattern nnz {pattern.nnz}")
        diag = values[pattern.diag_slots]
        if np.any(diag <= 0):
            raise ValueError("factor diagonal must be strictly positive")
        star = values.copy()
        star[pattern.diag_slots] = np.log(diag)
        return cls(pattern, values, star)

    @classmethod
    def from_star(cls, pattern: SparsityPattern, star_values) -> "CholFactor":
        star = np.asarray(star_values, dtype=float).copy()
        if star.shape != (pattern.nnz,):
            raise ValueError(f"star values length {star.size} != pattern nnz {pattern.nnz}")
        star[pattern.diag_slots] = np.maximum(star[pattern.diag_slots], STAR_DIAG_FLOOR)
        values = star.copy()
        values[pattern.diag_slots] = np.exp(star[pattern.diag_slots])
        return cls(pattern, values, star)

    @classmethod
    def identity(cls, pattern: SparsityPattern, scale: float = 1.0) -> "CholFactor":
        values = np.zeros(pattern.nnz)
        values[pattern.diag_slots] = scale
        return cls.from_values(pattern, values)

    @property
    def dim(self) -> int:
        return self.pattern.dim

    @property
    def diag(self) -> np.ndarray:
        return self.values[self.pattern.diag_slots]

    @property
    def log_det(self) -> float:
        """log det T = sum of log diagonal (= star diagonal)."""
        return float(np.sum(self.star_values[self.pattern.diag_slots]))

    def as_dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = vech_scatter(self.values, self.pattern)
        return self._dense

    def _sparse(self):
        if self._csr is None:
            p = self.pattern
            self._csr = scipy.sparse.csr_matrix(
                (self.values, (p.rows, p.cols)), shape=(p.dim, p.dim)
            )
            self._csr_t = self._csr.T.tocsr()
        return self._csr, self._csr_t

    def _check_diag(self):
        if np.any(np.abs(self.diag) < SINGULAR_TOL):
            raise SingularFactorError("factor diagonal below 1e-300; solve would overflow")

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """x with T x = b (forward substitution; b may be a matrix of columns)."""
        self._check_diag()
        b = np.asarray(b, dtype=float)
        if self.dim <= DENSE_SOLVE_CUTOFF:
            return scipy.linalg.solve_triangular(self.as_dense(), b, lower=True)
        csr, _ = self._sparse()
        return scipy.sparse.linalg.spsolve_triangular(csr, b, lower=True)

    def solve_upper_transpose(self, b: np.ndarray) -> np.ndarray:
        """x with T^t x = b (back substitution; b may be a matrix of columns)."""
        self._check_diag()
        b = np.asarray(b, dtype=float)
        if self.dim <= DENSE_SOLVE_CUTOFF:
            return scipy.linalg.solve_triangular(self.as_dense(), b, lower=True, trans="T")
        _, csr_t = self._sparse()
        return scipy.sparse.linalg.spsolve_triangular(csr_t, b, lower=False)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """T @ x without densifying when the factor is large."""
        if self.dim <= DENSE_SOLVE_CUTOFF:
            return self.as_dense() @ x
        csr, _ = self._sparse()
        return csr @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """T^t @ x."""
        if self.dim <= DENSE_SOLVE_CUTOFF:
            return self.as_dense().T @ x
        _, csr_t = self._sparse()
        return csr_t @ x

    def precision(self) -> np.ndarray:
        """Dense Omega = T T^t (diagnostic use only)."""
        t = self.as_dense() if self.dim <= DENSE_SOLVE_CUTOFF else self._sparse()[0].toarray()
        return t @ t.T


def solve_lower(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    return factor.solve_lower(b)


def solve_upper_transpose(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    return factor.solve_upper_transpose(b)


@dataclass(frozen=True)
class DiagScaler:
    """Chain-rule scaler between vech(T) and vech(T*) gradients.

    d_diag holds T_ii at diagonal slots and 1 elsewhere, so that
    grad_{T*} f = DiagScaler.apply(grad_T f).
    """

    d_diag: np.ndarray

    @classmethod
    def from_factor(cls, factor: CholFactor) -> "DiagScaler":
        d = np.ones(factor.pattern.nnz)
        d[factor.pattern.diag_slots] = factor.diag
        return cls(d)

    def apply(self, grad: np.ndarray) -> np.ndarray:
        return grad * self.d_diag
