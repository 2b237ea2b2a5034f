"""Equality-constrained lp-norm minimization, one column at a time.

Solves ``min ||x||_p  s.t.  A x = b`` for 1 <= p <= 2 on wide
full-row-rank matrices.  p = 2 has the closed form
``A^T (A A^T)^{-1} b``; p < 2 runs Douglas-Rachford/ADMM splitting that
alternates projection onto the affine constraint with the separable
proximal map of ``lambda * |.|^p`` (soft thresholding at p = 1, a
safeguarded Newton solve in between).  A brute-force enumeration oracle
covers tiny instances, and a KKT dual certificate decides optimality
and uniqueness of l1 solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dense import (
    DimensionError,
    as_matrix,
    as_vector,
    cholesky_gram,
)

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_CERTIFIED_UNIQUE = "certified_unique"
STATUS_NONUNIQUE_RISK = "certified_nonunique_risk"
STATUS_NOT_CERTIFIED = "not_certified"

# Combinatorial guard for the enumeration oracle.
ORACLE_MAX_N = 20
# Relative feasibility tolerance used when enumerating basic solutions.
_ORACLE_FEAS_RTOL = 1e-9
# Two basic solutions whose costs agree to this relative tolerance tie.
_ORACLE_TIE_RTOL = 1e-9


class OracleSizeError(ValueError):
    """Raised when an instance is too large for exhaustive enumeration."""


class InconsistentSolutionError(ValueError):
    """Raised when a certificate is requested for x = 0 with b != 0."""


@dataclass
class SolverConfig:
    """Tolerances and limits shared by the splitting solver and certificates.

    ``tol_primal`` and ``tol_dual`` are relative; ``splitting_step`` is
    the ADMM penalty rho > 0; entries of a solution smaller than
    ``sparsity_rel_threshold`` times its sup-norm count as zeros;
    ``certificate_margin`` is the slack demanded of the dual certificate.
    """

    max_iters: int = 50_000
    tol_primal: float = 1e-10
    tol_dual: float = 1e-10
    splitting_step: float = 1.0
    sparsity_rel_threshold: float = 1e-8
    certificate_margin: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        for name in ("tol_primal", "tol_dual", "splitting_step",
                     "sparsity_rel_threshold", "certificate_margin"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass
class BpSolution:
    """One column's lp-minimal solution with its dual and diagnostics."""

    x: np.ndarray = field(repr=False)
    dual: np.ndarray = field(repr=False)
    p: float
    iterations: int
    primal_residual: float
    objective: float
    status: str
    b: np.ndarray = field(repr=False, default=None)


def lp_norm(x, p):
    """Entrywise lp norm of a vector or matrix, 1 <= p <= 2."""
    v = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    if p == 1.0:
        return float(v.sum())
    if p == 2.0:
        return float(np.sqrt((v * v).sum()))
    return float((v ** p).sum() ** (1.0 / p))


def _check_p(p):
    p = float(p)
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    return p


def _shrink_root(a, lam, p, rtol=1e-15, max_iter=120):
    """Solve ``x + lam*p*x**(p-1) = a`` elementwise for x >= 0.

    ``a`` must be non-negative; ``lam`` broadcasts against ``a``.  Valid
    for any exponent p > 1 (used with 1 < p < 2 for the prox and with
    the Holder conjugate p* > 2 for ball projections).  Safeguarded
    Newton: the root is bracketed in [0, a] and steps leaving the
    bracket fall back to bisection.
    """
    a = np.asarray(a, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), a.shape)
    lo = np.zeros_like(a)
    hi = a.copy()
    x = 0.5 * a
    tol = rtol * (1.0 + a)
    live = a > 0.0
    for _ in range(max_iter):
        if not live.any():
            break
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            g = x + lam * p * x ** (p - 1.0) - a
            gp = 1.0 + lam * p * (p - 1.0) * x ** (p - 2.0)
            step = np.where(live, g / gp, 0.0)
        above = g > 0.0
        hi = np.where(live & above, x, hi)
        lo = np.where(live & ~above, x, lo)
        xn = x - step
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        x = np.where(live, xn, x)
        live = live & (np.abs(g) > tol)
    return np.where(a > 0.0, x, 0.0)


def _prox_power(v, lam, p):
    """Elementwise ``argmin_x 0.5*(x-v)^2 + lam*|x|^p`` for 1 <= p <= 2."""
    v = np.asarray(v, dtype=np.float64)
    if p == 1.0:
        return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    if p == 2.0:
        return v / (1.0 + 2.0 * lam)
    return np.sign(v) * _shrink_root(np.abs(v), lam, p)


def prox_lp_scalar(v, lam, p):
    """Scalar proximal map of ``lam * |.|^p``: argmin 0.5*(x-v)^2 + lam*|x|^p.

    Soft threshold at p = 1, ``v / (1 + 2*lam)`` at p = 2, safeguarded
    Newton on the stationarity equation in between.  Odd and monotone in
    ``v`` with ``|result| <= |v|``.
    """
    if lam <= 0.0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    p = _check_p(p)
    return float(_prox_power(np.asarray([v], dtype=np.float64), lam, p)[0])


def _col_norms(x):
    return np.sqrt((x * x).sum(axis=0))


def _split_lp(a, factor, b_cols, p, cfg):
    """Batched ADMM for ``min sum_i |x_i|^p  s.t.  A x = b`` per column.

    ``b_cols`` is m-by-k; returns (X, iterations, converged) where X is
    n-by-k, iterations counts sweeps per column and converged flags
    which columns met both tolerances.  Columns that converge are
    frozen and dropped from the working set.  Every returned column is
    an affine projection, hence feasible to round-off.
    """
    m, n = a.shape
    k = b_cols.shape[1]
    lam = 1.0 / cfg.splitting_step

    at = np.ascontiguousarray(a.T)
    x_out = np.empty((n, k))
    iterations = np.full(k, cfg.max_iters, dtype=int)
    converged = np.zeros(k, dtype=bool)

    # Warm start from the minimum-l2 (MPP) solution, which is feasible.
    z = at @ factor.solve(b_cols)
    u = np.zeros_like(z)
    b_act = b_cols.copy()
    idx = np.arange(k)

    for it in range(1, cfg.max_iters + 1):
        v = z - u
        x = v - at @ factor.solve(a @ v - b_act)
        z_new = _prox_power(x + u, lam, p)
        u += x - z_new
        r_primal = _col_norms(x - z_new) / (1.0 + _col_norms(x))
        r_change = _col_norms(z_new - z) / (1.0 + _col_norms(z_new))
        z = z_new
        done = (r_primal <= cfg.tol_primal) & (r_change <= cfg.tol_dual)
        if done.any():
            cols = idx[done]
            x_out[:, cols] = x[:, done]
            iterations[cols] = it
            converged[cols] = True
            if done.all():
                break
            keep = ~done
            idx = idx[keep]
            z = z[:, keep]
            u = u[:, keep]
            b_act = b_act[:, keep]
    else:
        x_out[:, idx] = x[:, ~done]

    return x_out, iterations, converged


def _support_mask(x, rel_threshold):
    """Entries of x larger than rel_threshold times its sup-norm."""
    scale = np.max(np.abs(x))
    return np.abs(x) > rel_threshold * scale


def _polish_l1(a, b, x, rel_threshold):
    """Refine a converged l1 iterate to the exact basic solution.

    Re-solves on the detected support, which zeroes splitting-solver
    residue exactly.  Rejected (returning ``x`` unchanged) unless the
    refit is feasible to near round-off and does not increase the
    objective.
    """
    m, n = a.shape
    mask = _support_mask(x, rel_threshold)
    size = int(mask.sum())
    if size == 0 or size > m:
        return x
    cols = a[:, mask]
    xs, _, rank, _ = np.linalg.lstsq(cols, b, rcond=None)
    if rank < size:
        return x
    if np.linalg.norm(cols @ xs - b) > 1e-12 * (1.0 + np.linalg.norm(b)):
        return x
    polished = np.zeros(n)
    polished[mask] = xs
    old, new = np.abs(x).sum(), np.abs(polished).sum()
    if new > old + 1e-12 * (1.0 + old):
        return x
    return polished


def _dual_vector(a, factor, x, p, cfg):
    """KKT dual estimate for ``min sum |x_i|^p  s.t.  A x = b``.

    For p > 1 the program is smooth and ``A^T nu = grad`` holds exactly
    at the optimum, so nu is the least-squares solve against the
    gradient.  For p = 1 the dual solves the equicorrelation system
    ``A_S^T nu = sign(x_S)`` on the detected support.
    """
    if p > 1.0:
        grad = p * np.abs(x) ** (p - 1.0) * np.sign(x)
        return factor.solve(a @ grad)
    mask = _support_mask(x, cfg.sparsity_rel_threshold)
    if not mask.any():
        return np.zeros(a.shape[0])
    nu, *_ = np.linalg.lstsq(a[:, mask].T, np.sign(x[mask]), rcond=None)
    return nu


def solve_bp(a, b, p, cfg=None):
    """Solve ``min ||x||_p  s.t.  A x = b`` for a wide full-row-rank A.

    Returns a :class:`BpSolution`; non-convergence is reported through
    ``status == "max_iters"`` with residuals attached, never raised.
    """
    cfg = cfg or SolverConfig()
    p = _check_p(p)
    a = as_matrix(a)
    m, n = a.shape
    b = as_vector(b, m, "b")
    factor = cholesky_gram(a)

    if p == 2.0:
        x = a.T @ factor.solve(b)
        iterations, status = 0, STATUS_CONVERGED
    else:
        x_mat, iters, conv = _split_lp(a, factor, b[:, None], p, cfg)
        x = x_mat[:, 0]
        iterations = int(iters[0])
        status = STATUS_CONVERGED if conv[0] else STATUS_MAX_ITERS
        if p == 1.0 and status == STATUS_CONVERGED:
            x = _polish_l1(a, b, x, cfg.sparsity_rel_threshold)

    return BpSolution(
        x=x,
        dual=_dual_vector(a, factor, x, p, cfg),
        p=p,
        iterations=iterations,
        primal_residual=float(np.linalg.norm(a @ x - b)),
        objective=lp_norm(x, p),
        status=status,
        b=b,
    )


def solve_oracle(a, b, p, cfg=None):
    """Ground-truth solver for tiny instances (n <= 20).

    For p = 1 enumerates every column subset S with |S| <= m whose
    restricted system is uniquely solvable and feasible, and returns
    the basic solution of minimal l1 norm; exact because the minimizer
    set always contains an m-sparse point.  Ties between distinct
    supports are reported as ``certified_nonunique_risk``.  For p = 2
    the minimum-norm solution is the closed form through the Gram
    factor.  For 1 < p < 2 sparse enumeration is invalid, so the
    splitting solver reruns at 10x tighter tolerance.
    """
    cfg = cfg or SolverConfig()
    p = _check_p(p)
    a = as_matrix(a)
    m, n = a.shape
    if n > ORACLE_MAX_N:
        raise OracleSizeError(f"oracle limited to n <= {ORACLE_MAX_N}, got n={n}")
    b = as_vector(b, m, "b")

    if p == 2.0:
        return solve_bp(a, b, 2.0, cfg)
    if p > 1.0:
        tight = SolverConfig(
            max_iters=cfg.max_iters,
            tol_primal=cfg.tol_primal / 10.0,
            tol_dual=cfg.tol_dual / 10.0,
            splitting_step=cfg.splitting_step,
            sparsity_rel_threshold=cfg.sparsity_rel_threshold,
            certificate_margin=cfg.certificate_margin,
        )
        return solve_bp(a, b, p, tight)

    factor = cholesky_gram(a)
    b_norm = np.linalg.norm(b)
    candidates = []  # (cost, support tuple, solution vector)
    if b_norm <= _ORACLE_FEAS_RTOL:
        candidates.append((0.0, (), np.zeros(n)))
    for size in range(1, m + 1):
        for support in combinations(range(n), size):
            cols = a[:, support]
            xs, _, rank, _ = np.linalg.lstsq(cols, b, rcond=None)
            if rank < size:
                continue
            if np.linalg.norm(cols @ xs - b) > _ORACLE_FEAS_RTOL * (1.0 + b_norm):
                continue
            x = np.zeros(n)
            x[list(support)] = xs
            candidates.append((float(np.abs(xs).sum()), support, x))
    if not candidates:
        raise np.linalg.LinAlgError(
            "oracle found no feasible basic solution; b may lie outside range(A)"
        )

    best_cost = min(c for c, _, _ in candidates)
    tie_tol = _ORACLE_TIE_RTOL * (1.0 + best_cost)
    optimal = [c for c in candidates if c[0] <= best_cost + tie_tol]
    supports = {s for _, s, _ in optimal}
    status = STATUS_NONUNIQUE_RISK if len(supports) > 1 else STATUS_CONVERGED
    x = min(optimal, key=lambda c: (c[0], c[1]))[2]

    return BpSolution(
        x=x,
        dual=_dual_vector(a, factor, x, 1.0, cfg),
        p=1.0,
        iterations=0,
        primal_residual=float(np.linalg.norm(a @ x - b)),
        objective=float(np.abs(x).sum()),
        status=status,
        b=b,
    )


def certify(a, sol, cfg=None):
    """KKT certificate of l1 optimality and uniqueness.

    Solves ``A_S^T nu = sign(x_S)`` on the support S in least squares
    and checks the subgradient conditions: exact on-support match,
    off-support correlations strictly inside the unit interval, and
    full column rank of A_S.  Returns ``certified_unique`` when all
    hold with margin, ``certified_nonunique_risk`` when an off-support
    correlation sits within the margin of one, else ``not_certified``.
    """
    cfg = cfg or SolverConfig()
    if sol.p != 1.0:
        raise ValueError(f"certificate defined for p=1 only, got p={sol.p}")
    a = as_matrix(a)
    status, _ = _certify_column(a, sol.x, sol.b, cfg)
    return status


def _certify_column(a, x, b, cfg):
    """Certificate core shared by :func:`certify` and the assemblers."""
    mask = _support_mask(x, cfg.sparsity_rel_threshold)
    if not mask.any():
        if b is not None and np.linalg.norm(b) > 0.0:
            raise InconsistentSolutionError(
                "empty support with b != 0: x cannot be feasible"
            )
        return STATUS_CERTIFIED_UNIQUE, np.zeros(a.shape[0])

    signs = np.sign(x[mask])
    cols_t = a[:, mask].T
    nu, _, rank, _ = np.linalg.lstsq(cols_t, signs, rcond=None)
    on_residual = np.max(np.abs(cols_t @ nu - signs))
    off = np.abs(a[:, ~mask].T @ nu) if (~mask).any() else np.zeros(0)

    margin = cfg.certificate_margin
    full_rank = rank == int(mask.sum())
    if (
        on_residual <= margin
        and full_rank
        and (off.size == 0 or off.max() <= 1.0 - margin)
    ):
        return STATUS_CERTIFIED_UNIQUE, nu
    if off.size and np.any(np.abs(off - 1.0) <= margin):
        return STATUS_NONUNIQUE_RISK, nu
    return STATUS_NOT_CERTIFIED, nu
