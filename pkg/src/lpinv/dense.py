"""Dense real linear algebra core.

Seeded Gaussian sampling, Cholesky factorization of the Gram matrix
``A A^T``, the closed-form pseudoinverse ``A^T (A A^T)^{-1}`` for wide
full-row-rank matrices, projection onto affine constraint sets
``{x : A x = b}``, and matrix CSV I/O.

Matrices are plain 2-D float64 ``numpy`` arrays in row-major order,
validated on entry (finite entries, consistent shapes) by
:func:`as_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

# Relative pivot tolerance for full-row-rank checks: the smallest
# Cholesky pivot of A A^T must exceed RANK_RTOL times the largest.
RANK_RTOL = 1e-12


class DimensionError(ValueError):
    """Raised when matrix/vector dimensions are empty or inconsistent."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix fails the numerical full-rank test.

    Carries ``pivot_index``, the index of the offending Cholesky (or LU)
    pivot.
    """

    def __init__(self, message, pivot_index):
        super().__init__(message)
        self.pivot_index = int(pivot_index)


def as_matrix(a):
    """Validate and return ``a`` as a 2-D float64 array.

    Raises ``DimensionError`` if ``a`` is not 2-D or has a zero
    dimension, and ``ValueError`` if any entry is NaN or infinite.
    """
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got ndim={out.ndim}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise DimensionError(f"matrix dimensions must be >= 1, got {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError("matrix contains non-finite entries")
    return out


def as_vector(v, length=None, name="vector"):
    """Validate and return ``v`` as a 1-D float64 array of ``length``."""
    out = np.asarray(v, dtype=np.float64).ravel()
    if length is not None and out.size != length:
        raise DimensionError(f"{name} has length {out.size}, expected {length}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite entries")
    return out


class SeededRng:
    """Deterministic random stream keyed by a 64-bit integer seed.

    Identical seeds produce identical streams within this package.
    Concurrent tasks should each own a child stream obtained from
    :meth:`child`, which hashes (parent seed, task index) into a fresh
    64-bit seed, so results do not depend on scheduling order.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, index):
        """Derive an independent child stream for task ``index``."""
        derived = np.random.SeedSequence(self.seed, spawn_key=(int(index),))
        return SeededRng(int(derived.generate_state(1, dtype=np.uint64)[0]))

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def subset(self, n, k):
        """Draw a uniformly random k-subset of range(n), sorted."""
        return np.sort(self._gen.choice(int(n), size=int(k), replace=False))

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"


def gaussian_matrix(rng, m, n):
    """Draw an m-by-n matrix of iid standard normal entries from ``rng``.

    Advances the stream; two calls with the same fresh seed produce
    identical matrices.
    """
    if m < 1 or n < 1:
        raise DimensionError(f"matrix dimensions must be >= 1, got ({m}, {n})")
    return rng.standard_normal((int(m), int(n)))


@dataclass(frozen=True)
class GramFactor:
    """Lower Cholesky factor L with L L^T = A A^T for a wide matrix A."""

    size: int
    lower: np.ndarray = field(repr=False)

    def solve(self, rhs):
        """Solve (A A^T) w = rhs; rhs may be a vector or a matrix."""
        return cho_solve((self.lower, True), rhs, check_finite=False)


def _first_bad_pivot(gram):
    """Index of the first non-positive pivot in a failed Cholesky."""
    g = gram.copy()
    m = g.shape[0]
    for k in range(m):
        if g[k, k] <= 0.0:
            return k
        g[k, k] = np.sqrt(g[k, k])
        g[k + 1:, k] /= g[k, k]
        g[k + 1:, k + 1:] -= np.outer(g[k + 1:, k], g[k + 1:, k])
    return m - 1


def cholesky_gram(a):
    """Factor A A^T = L L^T for a wide full-row-rank matrix A.

    Raises ``SingularMatrixError`` (with the failing pivot index) when
    the smallest pivot does not exceed ``RANK_RTOL`` times the largest,
    i.e. when A is numerically rank deficient.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m > n:
        raise DimensionError(f"expected a wide matrix (m <= n), got {m}x{n}")
    gram = a @ a.T
    try:
        lower = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        k = _first_bad_pivot(gram)
        raise SingularMatrixError(
            f"A A^T is not positive definite (pivot {k}); A is rank deficient", k
        ) from None
    pivots = np.diag(lower) ** 2
    k = int(np.argmin(pivots))
    if pivots[k] <= RANK_RTOL * pivots.max():
        raise SingularMatrixError(
            f"pivot {k} of A A^T below relative tolerance {RANK_RTOL:g}; "
            "A is numerically rank deficient", k
        )
    return GramFactor(size=m, lower=lower)


def mpp(a):
    """Moore-Penrose pseudoinverse A^T (A A^T)^{-1} of a wide full-row-rank A."""
    a = as_matrix(a)
    factor = cholesky_gram(a)
    return factor.solve(a).T


def affine_project(a, factor, b, z):
    """Orthogonal projection of z onto {x : A x = b}.

    Returns ``z - A^T (A A^T)^{-1} (A z - b)``.  ``z`` and ``b`` may be
    a vector/vector pair or n-by-k and m-by-k matrices (column-wise
    projection).  ``factor`` must be the Gram factor of ``a``.
    """
    a = as_matrix(a)
    m, n = a.shape
    if factor.size != m:
        raise DimensionError(f"Gram factor size {factor.size} does not match m={m}")
    z = np.asarray(z, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if z.shape[0] != n:
        raise DimensionError(f"z has leading dimension {z.shape[0]}, expected {n}")
    if b.shape[0] != m or b.shape[1:] != z.shape[1:]:
        raise DimensionError(f"b has shape {b.shape}, incompatible with A z")
    return z - a.T @ factor.solve(a @ z - b)


def write_matrix_csv(a, path):
    """Write a matrix as CSV, one row per line, with a shape header."""
    a = as_matrix(a)
    m, n = a.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# rows={m} cols={n}\n")
        for row in a:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_matrix_csv(path):
    """Read a matrix written by :func:`write_matrix_csv`."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# rows=<m> cols=<n>' header")
        fields = dict(
            part.split("=") for part in header.lstrip("#").split() if "=" in part
        )
        try:
            m, n = int(fields["rows"]), int(fields["cols"])
        except KeyError:
            raise ValueError(f"{path}: malformed header {header!r}") from None
        rows = [
            [float(tok) for tok in line.split(",")]
            for line in (ln.strip() for ln in fh)
            if line
        ]
    out = np.asarray(rows, dtype=np.float64)
    if out.shape != (m, n):
        raise ValueError(f"{path}: header promises {m}x{n}, file holds {out.shape}")
    return as_matrix(out)
