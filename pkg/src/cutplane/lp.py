"""Dense two-phase primal simplex returning basic (vertex) solutions and duals.

The pivot loop is compiled with numba; the tableau is a plain float64 array.

Sign convention for multipliers (minimization): equality duals are free,
duals of ``<=`` rows are nonpositive.  With ``y`` the stacked duals, an
optimal pair satisfies ``A^T y <= c`` on nonnegative columns, ``A^T y = c``
on free columns and ``b . y == c . x``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

TOL = 1e-8
PIVOT_TOL = 1e-9
MAX_PIVOTS = 200_000


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _as_matrix(rows, n: int) -> np.ndarray:
    if rows is None:
        return np.zeros((0, n))
    out = np.array(rows, dtype=float)
    if out.size == 0:
        return np.zeros((0, n))
    return np.atleast_2d(out)


def _as_vector(v, m: int) -> np.ndarray:
    if v is None:
        return np.zeros(m)
    return np.array(v, dtype=float).reshape(-1)


@dataclass(frozen=True)
class LinearProgram:
    """``min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= lower``.

    ``lower`` holds ``0.0`` (nonnegative) or ``-inf`` (free) per variable.
    """

    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_ub: np.ndarray = None
    b_ub: np.ndarray = None
    lower: np.ndarray = None

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        n = c.size
        A_eq = _as_matrix(self.A_eq, n)
        A_ub = _as_matrix(self.A_ub, n)
        b_eq = _as_vector(self.b_eq, A_eq.shape[0])
        b_ub = _as_vector(self.b_ub, A_ub.shape[0])
        lower = np.zeros(n) if self.lower is None else np.array(self.lower, dtype=float).reshape(-1)
        if A_eq.shape[1] != n or A_ub.shape[1] != n:
            raise ValueError("constraint matrices must have one column per variable")
        if b_eq.size != A_eq.shape[0] or b_ub.size != A_ub.shape[0]:
            raise ValueError("right-hand side length does not match row count")
        if lower.size != n or not np.all((lower == 0.0) | (lower == -np.inf)):
            raise ValueError("lower bounds must be 0 or -inf")
        for name, arr in (("c", c), ("A_eq", A_eq), ("b_eq", b_eq), ("A_ub", A_ub), ("b_ub", b_ub)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or infinite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_ub", A_ub)
        object.__setattr__(self, "b_ub", b_ub)
        object.__setattr__(self, "lower", lower)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def free(self) -> np.ndarray:
        return self.lower == -np.inf


@dataclass
class LpSolution:
    status: Status
    primal: np.ndarray | None = None
    objective_value: float = float("nan")
    duals_eq: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    basis: tuple[int, ...] = ()
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class StandardForm:
    """``min c.z  s.t.  A z = b, z >= 0`` plus the map back to the source LP.

    Column layout: one column per original variable (the positive part for
    free ones), then one negative-part column per free variable, then one
    slack per inequality row.  Rows: equalities first, then inequalities.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n_orig: int
    free_index: np.ndarray
    n_eq: int
    n_ub: int

    def recover(self, z: np.ndarray, y: np.ndarray):
        """Map a standard-form primal/dual pair to ``(x, duals_eq, duals_ineq)``."""
        x = z[: self.n_orig].copy()
        neg = z[self.n_orig : self.n_orig + self.free_index.size]
        x[self.free_index] -= neg
        return x, y[: self.n_eq].copy(), y[self.n_eq : self.n_eq + self.n_ub].copy()

    def lift(self, x: np.ndarray) -> np.ndarray:
        """Inverse of the primal part of :meth:`recover` (slacks filled in)."""
        nf = self.free_index.size
        z = np.zeros(self.c.size)
        z[: self.n_orig] = x
        xf = x[self.free_index]
        z[self.free_index] = np.maximum(xf, 0.0)
        z[self.n_orig : self.n_orig + nf] = np.maximum(-xf, 0.0)
        if self.n_ub:
            A_ub = self.A[self.n_eq :, : self.n_orig]
            z[self.n_orig + nf :] = self.b[self.n_eq :] - A_ub @ x
        return z


def to_standard_form(lp: LinearProgram) -> StandardForm:
    n, m_eq, m_ub = lp.n, lp.A_eq.shape[0], lp.A_ub.shape[0]
    free_index = np.flatnonzero(lp.free)
    nf = free_index.size
    A = np.zeros((m_eq + m_ub, n + nf + m_ub))
    A[:m_eq, :n] = lp.A_eq
    A[m_eq:, :n] = lp.A_ub
    A[:, n : n + nf] = -A[:, free_index]
    A[m_eq:, n + nf :] = np.eye(m_ub)
    c = np.concatenate([lp.c, -lp.c[free_index], np.zeros(m_ub)])
    b = np.concatenate([lp.b_eq, lp.b_ub])
    return StandardForm(A, b, c, n, free_index, m_eq, m_ub)


@njit(cache=True)
def _pivot(T, d, r, j):
    m, w = T.shape
    piv = T[r, j]
    for k in range(w):
        T[r, k] /= piv
    for i in range(m):
        f = T[i, j]
        if i != r and f != 0.0:
            for k in range(w):
                T[i, k] -= f * T[r, k]
    f = d[j]
    if f != 0.0:
        for k in range(w):
            d[k] -= f * T[r, k]


@njit(cache=True)
def _iterate(T, d, basis, n_enter, budget, tol, pivot_tol):
    """Primal simplex pivots until optimal (0) or unbounded (1).

    Dantzig pricing; after ``m`` consecutive degenerate pivots the loop
    switches to Bland's rule for the rest of the phase, which rules out
    cycling.  Ratio-test ties go to the smallest basic index.
    Returns ``(status, pivots)``; status 2 means the budget ran out.
    """
    m = T.shape[0]
    pivots = 0
    stall = 0
    bland = False
    while True:
        j = -1
        best = -tol
        for k in range(n_enter):
            if d[k] < best:
                j = k
                if bland:
                    break
                best = d[k]
        if j < 0:
            return 0, pivots
        r = -1
        ratio = np.inf
        for i in range(m):
            a = T[i, j]
            if a > pivot_tol:
                q = T[i, -1] / a
                if r < 0 or q < ratio - 1e-12 * max(1.0, abs(ratio)):
                    r, ratio = i, q
                elif q <= ratio + 1e-12 * max(1.0, abs(ratio)) and basis[i] < basis[r]:
                    r = i
                    ratio = min(ratio, q)
        if r < 0:
            return 1, pivots
        if ratio <= 1e-12:
            stall += 1
            if stall > m:
                bland = True
        else:
            stall = 0
        _pivot(T, d, r, j)
        basis[r] = j
        pivots += 1
        if pivots > budget:
            return 2, pivots


def _loop(T, d, basis, n_enter):
    code, pivots = _iterate(T, d, basis, n_enter, MAX_PIVOTS, TOL, PIVOT_TOL)
    if code == 2:
        raise RuntimeError("simplex pivot budget exhausted")
    return (Status.OPTIMAL if code == 0 else Status.UNBOUNDED), int(pivots)


def simplex_standard(A: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Solve ``min c.z, A z = b, z >= 0``.

    Returns ``(status, z, y, basis, pivots)``.  Basis entries ``>= A.shape[1]``
    denote artificial columns left basic at zero on redundant rows.  Rows
    owning a unit column (a slack) start with it in the basis; every other
    row starts on its artificial.
    """
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A1 = A * sign[:, None]
    b1 = b * sign
    # artificial columns are never priced, so the tableau omits them
    T = np.empty((m, n + 1))
    T[:, :n] = A1
    T[:, -1] = b1
    basis = np.arange(n, n + m, dtype=np.int64)
    nz = A1 != 0
    unit = np.flatnonzero(nz.sum(axis=0) == 1)
    rows = nz[:, unit].argmax(axis=0)
    for i, j in zip(rows, unit):
        if basis[i] >= n and A1[i, j] > 0:
            T[i] /= A1[i, j]
            basis[i] = j
    art = basis >= n

    # phase 1: minimize the sum of the artificials still basic
    d = np.zeros(n + 1)
    d[:n] = -T[art, :n].sum(axis=0)
    d[-1] = -T[art, -1].sum()
    status, p1 = _loop(T, d, basis, n)
    if -d[-1] > TOL * max(1.0, float(np.abs(b1).max(initial=0.0))):
        return Status.INFEASIBLE, None, None, tuple(int(k) for k in basis), p1

    # drive leftover artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= n:
            cand = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if cand.size:
                j = int(cand[0])
                _pivot(T, d, r, j)
                basis[r] = j

    # phase 2
    c_ext = np.zeros(n + m + 1)
    c_ext[:n] = c
    d = np.zeros(n + 1)
    d[:n] = c
    d -= c_ext[basis] @ T
    status, p2 = _loop(T, d, basis, n)
    pivots = p1 + p2
    basis_t = tuple(int(k) for k in basis)
    if status is Status.UNBOUNDED:
        return status, None, None, basis_t, pivots

    # recompute the basic solution and duals from the original data
    full = np.hstack([A1, np.eye(m)])
    Bm = full[:, basis]
    xb = np.linalg.solve(Bm, b1)
    xb[np.abs(xb) < 1e-12] = 0.0
    z_ext = np.zeros(n + m)
    z_ext[basis] = xb
    y1 = np.linalg.solve(Bm.T, c_ext[: n + m][basis])
    return Status.OPTIMAL, z_ext[:n], y1 * sign, basis_t, pivots


def solve(lp: LinearProgram) -> LpSolution:
    """Solve ``lp``; infeasible and unbounded outcomes come back as statuses."""
    sf = to_standard_form(lp)
    if sf.A.shape[0] == 0:
        # no rows: optimum at the origin unless some cost pushes to infinity
        if np.any(lp.c < -TOL) or np.any(np.abs(lp.c[lp.free]) > TOL):
            return LpSolution(Status.UNBOUNDED)
        return LpSolution(Status.OPTIMAL, np.zeros(lp.n), 0.0, np.zeros(0), np.zeros(0), ())
    status, z, y, basis, pivots = simplex_standard(sf.A, sf.b, sf.c)
    if status is not Status.OPTIMAL:
        return LpSolution(status, basis=basis, pivots=pivots)
    x, y_eq, y_ub = sf.recover(z, y)
    return LpSolution(
        Status.OPTIMAL,
        primal=x,
        objective_value=float(lp.c @ x),
        duals_eq=y_eq,
        duals_ineq=y_ub,
        basis=basis,
        pivots=pivots,
    )


def dual_objective(lp: LinearProgram, sol: LpSolution) -> float:
    return float(lp.b_eq @ sol.duals_eq + lp.b_ub @ sol.duals_ineq)
