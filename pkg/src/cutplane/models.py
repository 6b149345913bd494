"""Benchmark model families: portfolio with transaction costs, inventory with
backorders, and a small random family used for oracle checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lp import LpSolution
from .program import Minorant, ModelError, StageRealization, StochasticProgram, make_rng


class SpecInvalid(ModelError):
    pass


# --- portfolio -------------------------------------------------------------

@dataclass
class PortfolioSpec:
    """Gross returns per stage; the riskless asset is appended as asset ``n+1``.

    ``return_table[t-1]`` has shape ``(M_t, n)`` (one row at stage 1),
    ``eta``/``nu`` have shape ``(T, n)``, ``riskfree_return`` shape ``(T,)``,
    ``x0`` and ``terminal_mean_return`` shape ``(n+1,)``.
    """

    n: int
    T: int
    u: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    riskfree_return: np.ndarray
    x0: np.ndarray
    return_table: list[np.ndarray]
    terminal_mean_return: np.ndarray
    probabilities: list[np.ndarray] | None = None

    @property
    def M(self) -> int:
        return max(len(r) for r in self.return_table[1:]) if self.T > 1 else 1

    def returns(self, t: int, j: int) -> np.ndarray:
        """Full ``(n+1)`` return vector of realization ``j`` at stage ``t``."""
        return np.append(self.return_table[t - 1][j], self.riskfree_return[t - 1])

    def check(self) -> None:
        n, T = self.n, self.T
        u = np.asarray(self.u, dtype=float)
        if n < 1 or T < 1:
            raise SpecInvalid("need n >= 1 and T >= 1")
        if u.shape != (n,) or np.any(u <= 0) or np.any(u > 1):
            raise SpecInvalid("position limits u must lie in (0, 1]")
        for name in ("eta", "nu"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (T, n) or np.any(arr <= 0):
                raise SpecInvalid(f"{name} must be a positive (T, n) array")
        if len(self.return_table) != T or len(self.return_table[0]) != 1:
            raise SpecInvalid("return_table needs T entries with a single stage-1 row")
        for t, tab in enumerate(self.return_table, start=1):
            tab = np.asarray(tab, dtype=float)
            if tab.ndim != 2 or tab.shape[1] != n or np.any(tab <= 0):
                raise SpecInvalid(f"stage {t}: returns must be a positive (M, n) array")
        if np.any(np.asarray(self.riskfree_return) <= 0):
            raise SpecInvalid("riskless returns must be positive")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (n + 1,) or np.any(x0 < 0):
            raise SpecInvalid("x0 must be a nonnegative vector of length n+1")
        if np.asarray(self.terminal_mean_return).shape != (n + 1,):
            raise SpecInvalid("terminal_mean_return must have length n+1")


def portfolio_realization(spec: PortfolioSpec, t: int, j: int, prob: float) -> StageRealization:
    """Rows: ``n`` asset balances, cash balance, ``n`` position limits.

    Columns: holdings ``x(1..n+1)``, sales ``y(1..n)``, purchases ``z(1..n)``.
    """
    n = spec.n
    xi = spec.returns(t, j)
    eta = np.asarray(spec.eta, dtype=float)[t - 1]
    nu = np.asarray(spec.nu, dtype=float)[t - 1]
    u = np.asarray(spec.u, dtype=float)
    nx = 3 * n + 1
    prev = n + 1 if t == 1 else nx
    A = np.zeros((2 * n + 1, nx))
    B = np.zeros((2 * n + 1, prev))
    for i in range(n):
        A[i, i] = 1.0
        A[i, n + 1 + i] = 1.0       # sold
        A[i, 2 * n + 1 + i] = -1.0  # bought
        B[i, i] = -xi[i]
    A[n, n] = 1.0
    A[n, n + 1 : 2 * n + 1] = -(1.0 - eta)
    A[n, 2 * n + 1 :] = 1.0 + nu
    B[n, n] = -xi[n]
    for i in range(n):
        A[n + 1 + i, i] = 1.0
        B[n + 1 + i, : n + 1] = -u[i] * xi
    kinds = ("eq",) * (n + 1) + ("le",) * n
    return StageRealization(A, B, np.zeros(2 * n + 1), np.zeros(nx), prob, kinds)


def build_portfolio(spec: PortfolioSpec) -> StochasticProgram:
    """Expected terminal wealth maximization, written as minimization of its negative.

    Each recourse function gets the zero-intercept initial minorant
    ``-K_t <xi_tj, x_{t-1}>`` with ``K_t`` the product of the largest gross
    returns of later stages times the largest terminal mean return: wealth
    never grows faster than that.
    """
    spec.check()
    n, T = spec.n, spec.T
    stages = []
    for t in range(1, T + 1):
        M_t = len(spec.return_table[t - 1])
        probs = (spec.probabilities[t - 1] if spec.probabilities is not None
                 else np.full(M_t, 1.0 / M_t))
        stages.append(tuple(portfolio_realization(spec, t, j, probs[j]) for j in range(M_t)))
    terminal = np.zeros(3 * n + 1)
    terminal[: n + 1] = -np.asarray(spec.terminal_mean_return, dtype=float)

    growth = [max(float(np.max(spec.returns(t, j))) for j in range(len(spec.return_table[t - 1])))
              for t in range(1, T + 1)]
    mins = []
    for t in range(2, T + 1):
        K = float(np.max(spec.terminal_mean_return)) * math.prod(growth[t:])
        stage_mins = []
        for j in range(len(spec.return_table[t - 1])):
            beta = np.zeros(3 * n + 1)
            beta[: n + 1] = -K * spec.returns(t, j)
            stage_mins.append(Minorant(0.0, beta))
        mins.append(tuple(stage_mins))
    return StochasticProgram(spec.x0, tuple(stages), terminal, tuple(mins) if mins else None,
                             name=f"portfolio-n{n}-T{T}-M{spec.M}")


def portfolio_cut_closedform(row_duals: np.ndarray, spec: PortfolioSpec, t: int, j: int):
    """Cut ``(theta, beta)`` from the asset/cash multipliers and the position-limit
    multipliers of the stage-``(t, j)`` LP.

    ``beta = (lam - <u, mu> e) o xi_tj`` on the holdings, zero on trades; the
    intercept is zero because every right-hand side is.  ``row_duals`` follow
    the row layout of :func:`portfolio_realization` with ``<=`` duals
    nonpositive, so ``mu = -row_duals[n+1:]``.
    """
    n = spec.n
    lam = np.asarray(row_duals[: n + 1], dtype=float)
    mu = -np.asarray(row_duals[n + 1 : 2 * n + 1], dtype=float)
    xi = spec.returns(t, j)
    beta = np.zeros(3 * n + 1 if t > 1 else n + 1)
    beta[: n + 1] = (lam - float(np.asarray(spec.u) @ mu)) * xi
    return 0.0, beta


# --- inventory -------------------------------------------------------------

@dataclass
class InventorySpec:
    """``demand_table[t-1]`` lists the demand support at stage ``t`` (one value at stage 1)."""

    T: int
    buy_cost: np.ndarray
    backorder_cost: np.ndarray
    holding_cost: np.ndarray
    x0: float
    demand_table: list[np.ndarray]
    probabilities: list[np.ndarray] | None = None

    @property
    def M(self) -> int:
        return max(len(d) for d in self.demand_table[1:]) if self.T > 1 else 1

    def check(self) -> None:
        if self.T < 1 or len(self.demand_table) != self.T or len(self.demand_table[0]) != 1:
            raise SpecInvalid("demand_table needs T entries with a single stage-1 value")
        for name in ("buy_cost", "backorder_cost", "holding_cost"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.T,) or np.any(arr < 0):
                raise SpecInvalid(f"{name} must be a nonnegative length-T vector")
        for t, d in enumerate(self.demand_table, start=1):
            if np.any(np.asarray(d, dtype=float) < 0):
                raise SpecInvalid(f"stage {t}: demands must be nonnegative")


def build_inventory(spec: InventorySpec) -> StochasticProgram:
    """Stage variables ``(x, y, q, s+, s-)``: end stock (free), post-order level,
    order quantity ``q = y - x_{t-1} >= 0``, surplus and shortage.

    Rows: ``x - y = -d``; ``s+ - s- - y = -d``; ``q - y + x_{t-1} = 0``;
    ``y <= x0 + sum of largest demands``.  Cost ``c q + b s- + h s+``.
    """
    spec.check()
    T = spec.T
    cap = float(spec.x0) + sum(float(np.max(d)) for d in spec.demand_table)
    A = np.array([
        [1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 1.0, -1.0],
        [0.0, -1.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
    ])
    kinds = ("eq", "eq", "eq", "le")
    free = np.array([True, False, False, False, False])
    stages = []
    for t in range(1, T + 1):
        demands = np.asarray(spec.demand_table[t - 1], dtype=float)
        probs = (spec.probabilities[t - 1] if spec.probabilities is not None
                 else np.full(demands.size, 1.0 / demands.size))
        c = np.array([0.0, 0.0, spec.buy_cost[t - 1], spec.holding_cost[t - 1], spec.backorder_cost[t - 1]])
        B = np.zeros((4, 1 if t == 1 else 5))
        B[2, 0] = 1.0
        stages.append(tuple(
            StageRealization(A, B, np.array([-d, -d, 0.0, cap]), c, p, kinds, free)
            for d, p in zip(demands, probs)
        ))
    # every stage cost is nonnegative, so zero bounds every recourse function
    mins = tuple(
        tuple(Minorant(0.0, np.zeros(5)) for _ in stages[t - 1]) for t in range(2, T + 1)
    )
    return StochasticProgram([float(spec.x0)], tuple(stages), None, mins or None,
                             name=f"inventory-T{T}-M{spec.M}")


# --- instance generators ---------------------------------------------------

def inventory_costs(T: int) -> np.ndarray:
    t = np.arange(1, T + 1)
    return 1.5 + np.cos(np.pi * t / 6)


def generate_inventory(M: int, T: int, seed: int, x0: float = 10.0) -> InventorySpec:
    rng = make_rng(seed, 7)
    demands = [np.array([5.0 + 0.5])]
    for t in range(2, T + 1):
        mean = 5.0 + 0.5 * t
        demands.append(np.maximum(mean * (1.0 + 0.1 * rng.standard_normal(M)), 0.0))
    return InventorySpec(T, inventory_costs(T), np.full(T, 2.8), np.full(T, 0.2), x0, demands)


# synthetic stand-in for historical daily equity returns
DAILY_DRIFT = 3e-4
DAILY_VOL = 1e-2
RISKFREE = 1.001


def generate_portfolio(M: int, T: int, n: int, seed: int) -> PortfolioSpec:
    """Log-normal daily gross returns; per-asset drift ~ N(3e-4, 1e-4^2) and
    volatility ~ U(0.5%, 1.5%).  One transaction cost per (stage, asset) drawn
    as ``0.08 + 0.06 cos(2 pi U / T)`` with ``U`` uniform on ``{1..T}``."""
    rng = make_rng(seed, 7)
    drift = DAILY_DRIFT + 1e-4 * rng.standard_normal(n)
    vol = rng.uniform(0.5 * DAILY_VOL, 1.5 * DAILY_VOL, n)
    table = [np.exp(drift + vol * rng.standard_normal((1, n)))]
    for _ in range(2, T + 1):
        table.append(np.exp(drift + vol * rng.standard_normal((M, n))))
    U = rng.integers(1, T + 1, size=(T, n))
    costs = 0.08 + 0.06 * np.cos(2 * np.pi / T * U)
    riskfree = np.full(T, RISKFREE)
    x0 = rng.uniform(0.0, 10.0, n + 1)
    terminal = np.append(table[-1].mean(axis=0), RISKFREE)
    return PortfolioSpec(n, T, np.ones(n), costs, costs.copy(), riskfree, x0, table, terminal)


def generate_paper_instance(family: str, params: dict, seed: int):
    """Spec object for ``family`` in {"portfolio", "inventory"}."""
    try:
        if family == "inventory":
            return generate_inventory(int(params["M"]), int(params["T"]), seed, float(params.get("x0", 10.0)))
        if family == "portfolio":
            return generate_portfolio(int(params["M"]), int(params["T"]), int(params["n"]), seed)
    except KeyError as exc:
        raise SpecInvalid(f"missing parameter {exc}") from None
    raise SpecInvalid(f"unknown family {family!r}")


def build(spec) -> StochasticProgram:
    if isinstance(spec, PortfolioSpec):
        return build_portfolio(spec)
    if isinstance(spec, InventorySpec):
        return build_inventory(spec)
    raise SpecInvalid(f"cannot build {type(spec).__name__}")


def random_program(seed: int, T: int = 3, M: int = 2, d: int = 2) -> StochasticProgram:
    """Small random program with relatively complete recourse.

    Variables per stage ``(x, u, v)`` in ``R^d`` each, all nonnegative; rows
    ``x - u + v = b - B x_prev(x-part)``, ``x <= 3``, ``u <= 5``.  With
    ``|B| <= 0.5`` and ``x_prev <= 3`` every stage is feasible and bounded.
    Costs on ``x`` may be negative.
    """
    rng = make_rng(seed, 11)
    nx = 3 * d
    A = np.zeros((3 * d, nx))
    A[:d, :d] = np.eye(d)
    A[:d, d : 2 * d] = -np.eye(d)
    A[:d, 2 * d :] = np.eye(d)
    A[d : 2 * d, :d] = np.eye(d)
    A[2 * d :, d : 2 * d] = np.eye(d)
    kinds = ("eq",) * d + ("le",) * (2 * d)
    stages = []
    for t in range(1, T + 1):
        M_t = 1 if t == 1 else M
        w = rng.uniform(0.5, 1.5, M_t)
        probs = w / w.sum()
        reals = []
        for j in range(M_t):
            B = np.zeros((3 * d, d if t == 1 else nx))
            B[:d, :d] = rng.uniform(-0.5, 0.5, (d, d))
            b = np.concatenate([rng.uniform(0.0, 2.0, d), np.full(d, 3.0), np.full(d, 5.0)])
            c = np.concatenate([rng.uniform(-1.0, 1.0, d), rng.uniform(0.5, 2.0, d), rng.uniform(0.5, 2.0, d)])
            reals.append(StageRealization(A, B, b, c, probs[j], kinds))
        stages.append(tuple(reals))
    x0 = rng.uniform(0.0, 3.0, d)
    return StochasticProgram(x0, tuple(stages), name=f"random-s{seed}-T{T}-M{M}-d{d}")
