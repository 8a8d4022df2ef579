"""
Block composition and direct factorization of the step systems.

Matrices are ``scipy.sparse`` CSR. Factorizations use UMFPACK (through
cvxopt) by default; SuperLU with threshold pivoting is the fallback
backend. Both handle the indefinite saddle-point structure, UMFPACK is
several times faster on these systems.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

try:
    import cvxopt
    from cvxopt import umfpack
except ImportError:  # pragma: no cover
    umfpack = None

DEFAULT_BACKEND = "umfpack" if umfpack is not None else "superlu"


class CompositionError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass
class BlockSystem:
    names: list
    sizes: list
    matrix: sparse.csr_matrix
    rhs: np.ndarray = None

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def block_of(self, index):
        return self.names[int(np.searchsorted(self.offsets, index, side='right')) - 1]

    def split(self, x):
        off = self.offsets
        return {n: x[off[k]:off[k + 1]] for k, n in enumerate(self.names)}


def _resolve(entry):
    """A block is a matrix or a tuple ``(matrix, tag)``, tag in {'T', '-', '-T'}."""
    if isinstance(entry, tuple):
        mat, tag = entry
        mat = sparse.csr_matrix(mat)
        if 'T' in tag:
            mat = mat.T
        if tag.startswith('-'):
            mat = -mat
        return mat
    return sparse.csr_matrix(entry)


def compose(names, sizes, blocks, rhs=None):
    """
    Assemble a global CSR matrix from a ``{(row, col): block}`` mapping.

    Missing blocks are structural zeros. Raises ``CompositionError`` when
    a block does not match the declared sizes.
    """
    idx = {n: k for k, n in enumerate(names)}
    grid = [[None] * len(names) for _ in names]
    for (r, c), entry in blocks.items():
        mat = _resolve(entry)
        want = (sizes[idx[r]], sizes[idx[c]])
        if mat.shape != want:
            raise CompositionError(f"block ({r}, {c}) has shape {mat.shape}, expected {want}")
        grid[idx[r]][idx[c]] = mat
    # bmat needs every block row/column to be pinned by at least one block
    for k, n in enumerate(sizes):
        if grid[k][k] is None:
            grid[k][k] = sparse.csr_matrix((n, n))
    A = sparse.bmat(grid, format='csr')
    A.eliminate_zeros()
    A.sort_indices()
    return BlockSystem(list(names), list(sizes), A, rhs)


class Factorization:
    """Reusable LU factorization; ``solve`` may be called any number of times."""

    def __init__(self, A, system=None, backend=None):
        self.A = sparse.csc_matrix(A)
        self.system = system
        self.backend = backend or DEFAULT_BACKEND
        if self.A.shape[0] != self.A.shape[1]:
            raise SolverError("matrix is not square")
        empty = self._empty_lines()
        if empty is not None:
            raise SolverError(empty)
        if not np.all(np.isfinite(self.A.data)):
            raise SolverError(f"non-finite matrix entries{self._where()}")
        if self.backend == "umfpack":
            coo = self.A.tocoo()
            self._M = cvxopt.spmatrix(coo.data.tolist(), coo.row.tolist(),
                                      coo.col.tolist(), coo.shape)
            try:
                self._num = umfpack.numeric(self._M, umfpack.symbolic(self._M))
            except ArithmeticError as exc:
                raise SolverError(f"singular matrix{self._where()}") from exc
        elif self.backend == "superlu":
            try:
                self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A",
                                     diag_pivot_thresh=1e-3,
                                     options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise SolverError(f"factorization failed ({exc}){self._where()}") from exc
            diag = np.abs(self._lu.U.diagonal())
            if not np.all(np.isfinite(diag)) or diag.min() == 0.0:
                raise SolverError(f"numerically singular matrix{self._where()}")
        else:
            raise ValueError(f"unknown backend {self.backend!r}")

    def _where(self, index=None):
        if self.system is None:
            return ""
        if index is None:
            return f" (blocks: {', '.join(self.system.names)})"
        return f" in block '{self.system.block_of(index)}'"

    def _empty_lines(self):
        nnz_col = np.diff(self.A.indptr)
        nnz_row = np.bincount(self.A.indices, minlength=self.A.shape[0])
        for kind, counts in (("row", nnz_row), ("column", nnz_col)):
            zero = np.flatnonzero(counts == 0)
            if zero.size:
                return f"structurally empty {kind} {zero[0]}{self._where(zero[0])}"
        return None

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.backend == "superlu":
            return self._lu.solve(b)
        x = cvxopt.matrix(b.copy())
        umfpack.solve(self._M, self._num, x)
        return np.array(x).ravel()

    def residual(self, x, b):
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        r = np.linalg.norm(self.A @ x - b)
        return r / nb if nb > 0 else r


def factorize(A, system=None, backend=None):
    return Factorization(A, system, backend)


def solve(F, b):
    return F.solve(b)
