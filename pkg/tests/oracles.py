"""Reference computations that share no code with the package solvers.

* ``enumerate_lp``: brute force over every basis of the standard form.
* ``recourse``: expected cost-to-go of a stage by building the subtree
  deterministic equivalent from scratch and solving it with HiGHS.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


def enumerate_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, tol=1e-9):
    """Minimum of ``c.x`` over ``A_eq x = b_eq, A_ub x <= b_ub, x >= 0`` by basis
    enumeration.  Returns ``(value, vertices)``; ``value`` is None when no basis is
    feasible.  Only meaningful for bounded feasible sets."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    m_ub = A_ub.shape[0]
    A = np.vstack([np.hstack([A_eq, np.zeros((A_eq.shape[0], m_ub))]), np.hstack([A_ub, np.eye(m_ub)])])
    b = np.concatenate([b_eq, b_ub])
    cc = np.concatenate([c, np.zeros(m_ub)])
    # drop linearly dependent rows
    rank = np.linalg.matrix_rank(A) if A.shape[0] else 0
    if rank < A.shape[0]:
        if np.linalg.matrix_rank(np.column_stack([A, b])) > rank:
            return None, []
        rows = []
        for i in range(A.shape[0]):
            if np.linalg.matrix_rank(A[rows + [i]]) == len(rows) + 1:
                rows.append(i)
        A, b = A[rows], b[rows]
    m, N = A.shape
    best, vertices = None, []
    for cols in itertools.combinations(range(N), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -tol):
            continue
        z = np.zeros(N)
        z[list(cols)] = xb
        vertices.append(z[:n])
        v = float(cc @ z)
        if best is None or v < best:
            best = v
    return best, vertices


def _subtree_lp(program, t, x_prev):
    """Deterministic equivalent of stages ``t..T`` given ``x_{t-1} = x_prev``.

    Every stage-``t`` realization is a root, weighted by its probability."""
    blocks = []  # (stage, realization, parent index, probability)

    def grow(stage, parent, prob):
        for j, r in enumerate(program.stages[stage - 1]):
            blocks.append((stage, j, parent, prob * r.probability))
            me = len(blocks) - 1
            if stage < program.T:
                grow(stage + 1, me, prob * r.probability)

    grow(t, -1, 1.0)
    offsets, col = [], 0
    for stage, j, _, _ in blocks:
        offsets.append(col)
        col += program.stages[stage - 1][j].A.shape[1]
    c = np.zeros(col)
    bounds = []
    eq_A, eq_b, ub_A, ub_b = [], [], [], []
    for k, (stage, j, parent, prob) in enumerate(blocks):
        r = program.stages[stage - 1][j]
        n = r.A.shape[1]
        sl = slice(offsets[k], offsets[k] + n)
        c[sl] += prob * r.c
        if stage == program.T and program.terminal_cost is not None:
            c[sl] += prob * program.terminal_cost
        bounds += [(None, None) if f else (0, None) for f in r.free]
        rows = np.zeros((r.A.shape[0], col))
        rows[:, sl] = r.A
        rhs = np.array(r.b, dtype=float)
        if parent < 0:
            rhs = rhs - r.B @ np.asarray(x_prev, dtype=float)
        else:
            pr = program.stages[blocks[parent][0] - 1][blocks[parent][1]]
            rows[:, offsets[parent] : offsets[parent] + pr.A.shape[1]] = r.B
        for i, kind in enumerate(r.row_kinds):
            if kind == "eq":
                eq_A.append(rows[i]); eq_b.append(rhs[i])
            else:
                ub_A.append(rows[i]); ub_b.append(rhs[i])
    return c, eq_A, eq_b, ub_A, ub_b, bounds


def recourse(program, t, x_prev) -> float:
    """``Q_t(x_prev)``: expected optimal cost of stages ``t..T``."""
    c, eq_A, eq_b, ub_A, ub_b, bounds = _subtree_lp(program, t, x_prev)
    res = linprog(
        c,
        A_ub=np.array(ub_A) if ub_A else None, b_ub=np.array(ub_b) if ub_b else None,
        A_eq=np.array(eq_A) if eq_A else None, b_eq=np.array(eq_b) if eq_b else None,
        bounds=bounds, method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"subtree LP at stage {t} failed: {res.message}")
    return float(res.fun)


def tree_value(program) -> float:
    return recourse(program, 1, program.x0)


def highs(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, free=None):
    """``(status, value)`` from HiGHS; status 0 optimal, 2 infeasible, 3 unbounded."""
    n = len(c)
    bounds = [(None, None) if free is not None and free[i] else (0, None) for i in range(n)]
    kw = {}
    if A_eq is not None and len(A_eq):
        kw.update(A_eq=A_eq, b_eq=b_eq)
    if A_ub is not None and len(A_ub):
        kw.update(A_ub=A_ub, b_ub=b_ub)
    res = linprog(c, bounds=bounds, method="highs", **kw)
    return res.status, (float(res.fun) if res.status == 0 else None)
