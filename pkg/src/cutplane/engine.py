"""Forward/backward decomposition driver.

Six methods come out of two switches: the recourse ``Q_t`` is approximated
either by one pool of aggregated cuts (``single``, SDDP) or by one pool per
realization of stage ``t`` (``multi``, MuDA), and each pool optionally runs a
cut selector (Level 1, LML1, ...).

Stage LP for realization ``(t, j)`` at incoming state ``x_prev``::

    min  c.x + sum_l w_l f_l
    s.t. A x (=|<=) b - B x_prev
         beta.x - f_l <= -theta       for the initial minorant and every
                                      selected cut of function l
The cut returned for ``(t, j)`` is ``theta = lam.b - mu.theta_rows`` and
``beta = -B^T lam`` where ``lam`` are the duals of the realization rows and
``mu <= 0`` the duals of the cut rows.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cutpool import Cut, CutPool, Selector
from .lp import LinearProgram, LpSolution, Status, solve
from .program import (
    Minorant,
    Scenario,
    StochasticProgram,
    all_scenarios,
    make_rng,
    sample_scenario,
    scenario_probability,
    structural_diagnostics,
)

# name -> (aggregation, selector); order follows the usual comparison tables
METHODS = {
    "sddp": ("single", None),
    "sddp-cs1": ("single", "level1"),
    "sddp-cs2": ("single", "lml1"),
    "muda": ("multi", None),
    "cusmuda-cs1": ("multi", "level1"),
    "cusmuda-cs2": ("multi", "lml1"),
}
LABELS = {
    "sddp": "SDDP",
    "sddp-cs1": "SDDP CS 1",
    "sddp-cs2": "SDDP CS 2",
    "muda": "MuDA",
    "cusmuda-cs1": "CuSMuDA CS 1",
    "cusmuda-cs2": "CuSMuDA CS 2",
}


class EngineError(RuntimeError):
    pass


class SubproblemInfeasible(EngineError):
    def __init__(self, t: int, j: int, scenario=None, status: Status = Status.INFEASIBLE):
        where = f"stage t={t}, realization j={j + 1}"
        if scenario is not None:
            where += f", scenario {scenario}"
        super().__init__(f"stage subproblem {status.value} at {where}")
        self.t, self.j, self.scenario, self.status = t, j, scenario, status


class DualExtractionMismatch(EngineError):
    pass


@dataclass
class MethodConfig:
    aggregation: str = "single"
    selector: str | None = None
    N: int = 1
    S: int = 100
    alpha: float = 0.025
    epsilon: float = 0.1
    epsilon0: float = 1e-6
    max_iterations: int = 500
    seed: int = 0
    sampling: str = "random"  # or "exhaustive": every scenario, exact policy value
    ub_every: int = 1
    initial_bound: float | None = None
    workers: int = 1

    def __post_init__(self):
        if self.aggregation not in ("single", "multi"):
            raise ValueError("aggregation must be 'single' or 'multi'")
        Selector.parse(self.selector)
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.S < 2:
            raise ValueError("S must be >= 2")
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sampling not in ("random", "exhaustive"):
            raise ValueError("sampling must be 'random' or 'exhaustive'")
        if self.ub_every < 1 or self.max_iterations < 0 or self.workers < 1:
            raise ValueError("ub_every and workers must be >= 1, max_iterations >= 0")

    @classmethod
    def for_method(cls, name: str, **overrides) -> MethodConfig:
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
        aggregation, selector = METHODS[name]
        return cls(aggregation=aggregation, selector=selector, **overrides)

    @property
    def method_name(self) -> str:
        for name, spec in METHODS.items():
            if spec == (self.aggregation, self.selector):
                return name
        return f"{self.aggregation}-{self.selector or 'none'}"


# --- Gaussian quantile ------------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF.

    Acklam's rational approximation (relative error below 1.2e-9) followed by
    one Halley step on ``erfc``, which brings the error to rounding level.
    The upper half uses the symmetry ``q(p) = -q(1 - p)``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p > 0.5:
        return -normal_quantile(1.0 - p)  # 1 - p is exact here
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - lo:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def check_stop(z_inf: float, z_sup: float, epsilon: float) -> bool:
    if z_inf == 0 and z_sup <= epsilon:
        return True
    return abs(z_sup - z_inf) <= epsilon * max(1.0, abs(z_sup))


# --- initial minorants ------------------------------------------------------

def derive_initial_bounds(program: StochasticProgram) -> list[list[float]]:
    """Constant lower bounds ``L[t][j]`` on each stage-``t`` recourse, ``t >= 2``.

    Backward recursion on relaxed stage LPs in which ``x_{t-1}`` is a decision
    variable restricted only by its sign constraints.  Raises when a relaxation
    is unbounded; such models need explicit ``initial_minorants``.
    """
    T = program.T
    bounds: list[list[float]] = [[] for _ in range(T + 2)]
    future = 0.0
    for t in range(T, 1, -1):
        prev_free = program.realization(t - 1, 0).free
        for j, r in enumerate(program.stage(t)):
            c = r.c.copy()
            if t == T and program.terminal_cost is not None:
                c = c + program.terminal_cost
            n, npv = r.n, r.B.shape[1]
            eq = r.eq_rows
            A = np.hstack([r.A, r.B])
            lp = LinearProgram(
                np.concatenate([c, np.zeros(npv)]),
                A[eq], r.b[eq], A[~eq], r.b[~eq],
                np.concatenate([np.where(r.free, -np.inf, 0.0), np.where(prev_free, -np.inf, 0.0)]),
            )
            sol = solve(lp)
            if sol.status is not Status.OPTIMAL:
                raise EngineError(
                    f"cannot derive an initial lower bound for stage {t} (relaxation is "
                    f"{sol.status.value}); supply initial_minorants or initial_bound"
                )
            bounds[t].append(sol.objective_value + future)
        future = float(program.probabilities(t) @ np.array(bounds[t]))
    return bounds


class ApproxRecourse:
    """Cut pools for ``Q_2 .. Q_T`` plus their initial affine minorants."""

    def __init__(self, program: StochasticProgram, config: MethodConfig):
        self.program = program
        self.multi = config.aggregation == "multi"
        selector = Selector.parse(config.selector)
        T = program.T
        self.pools: dict[int, list[CutPool]] = {}
        self.initial: dict[int, list[Minorant]] = {}
        per_real = self._initial_minorants(config)
        for t in range(2, T + 1):
            dim = program.state_dim(t)
            if self.multi:
                self.pools[t] = [CutPool(dim, selector, config.epsilon0) for _ in range(program.M(t))]
                self.initial[t] = per_real[t]
            else:
                self.pools[t] = [CutPool(dim, selector, config.epsilon0)]
                p = program.probabilities(t)
                theta = float(sum(pj * m.theta for pj, m in zip(p, per_real[t])))
                beta = sum(pj * m.beta for pj, m in zip(p, per_real[t]))
                self.initial[t] = [Minorant(theta, np.asarray(beta, dtype=float))]
        self.lp_count = {t: 0 for t in range(1, T + 1)}

    def _initial_minorants(self, config: MethodConfig) -> dict[int, list[Minorant]]:
        program = self.program
        if program.initial_minorants is not None:
            return {t: list(program.initial_minorants[t - 2]) for t in range(2, program.T + 1)}
        if config.initial_bound is not None:
            bounds = {t: [config.initial_bound] * program.M(t) for t in range(2, program.T + 1)}
        else:
            derived = derive_initial_bounds(program)
            bounds = {t: derived[t] for t in range(2, program.T + 1)}
        return {
            t: [Minorant(float(v), np.zeros(program.state_dim(t))) for v in bounds[t]]
            for t in bounds
        }

    def functions(self, t: int):
        """``(weight, pool, minorant)`` triples whose weighted sum approximates ``Q_t``."""
        if t > self.program.T:
            return []
        if self.multi:
            p = self.program.probabilities(t)
            return list(zip(p, self.pools[t], self.initial[t]))
        return [(1.0, self.pools[t][0], self.initial[t][0])]

    def evaluate(self, t: int, x, mode: str = "selected") -> float:
        """Current approximation of ``Q_t`` at ``x``."""
        total = 0.0
        for w, pool, m0 in self.functions(t):
            v = m0.theta + float(m0.beta @ x)
            if len(pool):
                v = max(v, pool.evaluate(x, mode))
            total += w * v
        return total

    def selected_proportions(self) -> dict[int, float]:
        out = {}
        for t, pools in self.pools.items():
            total = sum(len(p) for p in pools)
            chosen = sum(int(p.selected.sum()) for p in pools)
            out[t] = chosen / total if total else 0.0
        return out


@dataclass
class StageSolve:
    t: int
    j: int
    value: float
    x: np.ndarray
    row_duals: np.ndarray
    cut_duals: np.ndarray
    cut: Cut
    solution: LpSolution


def stage_lp(program: StochasticProgram, approx: ApproxRecourse, t: int, j: int, x_prev):
    """Epigraph LP of realization ``(t, j)``; returns ``(lp, theta_rows)``."""
    r = program.realization(t, j)
    funcs = approx.functions(t + 1)
    K = len(funcs)
    n = r.n
    c = r.c.copy()
    if t == program.T and program.terminal_cost is not None:
        c = c + program.terminal_cost
    c = np.concatenate([c, [w for w, _, _ in funcs]])
    lower = np.concatenate([np.where(r.free, -np.inf, 0.0), np.full(K, -np.inf)])
    rhs = r.rhs(x_prev)
    eq = r.eq_rows
    A_eq = np.hstack([r.A[eq], np.zeros((int(eq.sum()), K))])
    blocks = [np.hstack([r.A[~eq], np.zeros((int((~eq).sum()), K))])]
    rhs_ub = [rhs[~eq]]
    thetas = []
    for ell, (_, pool, m0) in enumerate(funcs):
        th, be = pool.selected_cuts()
        th = np.concatenate([[m0.theta], th])
        be = np.vstack([m0.beta, be])
        rows = np.zeros((th.size, n + K))
        rows[:, :n] = be
        rows[:, n + ell] = -1.0
        blocks.append(rows)
        rhs_ub.append(-th)
        thetas.append(th)
    lp = LinearProgram(c, A_eq, rhs[eq], np.vstack(blocks), np.concatenate(rhs_ub), lower)
    return lp, (np.concatenate(thetas) if thetas else np.zeros(0))


def solve_stage(program, approx, t, j, x_prev, scenario=None, check=True) -> StageSolve:
    lp, theta_rows = stage_lp(program, approx, t, j, x_prev)
    sol = solve(lp)
    approx.lp_count[t] += 1
    if sol.status is not Status.OPTIMAL:
        raise SubproblemInfeasible(t, j, scenario, sol.status)
    r = program.realization(t, j)
    eq = r.eq_rows
    n_le = int((~eq).sum())
    lam = np.zeros(r.b.size)
    lam[eq] = sol.duals_eq
    lam[~eq] = sol.duals_ineq[:n_le]
    mu = sol.duals_ineq[n_le:]
    theta = float(lam @ r.b - mu @ theta_rows)
    beta = -r.B.T @ lam
    value = sol.objective_value
    if check:
        at = theta + float(beta @ np.asarray(x_prev, dtype=float))
        if abs(at - value) > 1e-6 * max(1.0, abs(value)):
            raise DualExtractionMismatch(
                f"stage {t}, realization {j + 1}: cut value {at!r} at the trial point "
                f"differs from the LP value {value!r}"
            )
    return StageSolve(t, j, value, sol.primal[: r.n].copy(), lam, mu, Cut(theta, beta), sol)


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class Trajectory:
    scenario: Scenario
    states: list[np.ndarray]
    cost: float


def forward_pass(program, approx, scenarios, workers: int = 1) -> list[Trajectory]:
    """Simulate the current policy (selected cuts only) along each scenario.

    Scenarios sharing a prefix share the tree node, so each node is solved
    once per pass.
    """
    T = program.T
    # prefix (j_2, .., j_t) -> (state, cumulative cost) of that stage-t node
    nodes: dict[tuple, tuple[np.ndarray, float]] = {}
    for t in range(1, T + 1):
        keys = sorted({s.indices[: t - 1] for s in scenarios})

        def run(key, t=t):
            parent_x, parent_cost = nodes[key[:-1]] if t > 1 else (program.x0, 0.0)
            j = key[-1] if t > 1 else 0
            res = solve_stage(program, approx, t, j, parent_x, scenario=key, check=False)
            return res.x, parent_cost + program.immediate_cost(t, j, res.x)

        for key, out in zip(keys, _map(run, keys, workers)):
            nodes[key] = out
    return [
        Trajectory(s, [nodes[s.indices[: t - 1]][0] for t in range(1, T + 1)], nodes[s.indices][1])
        for s in scenarios
    ]


def backward_pass(program, approx, trajectories, workers: int = 1) -> dict[int, list[Cut]]:
    """Add cuts to every pool of stages ``T .. 2``, one per distinct trial point.

    The trial point for stage ``t`` is the stage ``t-1`` state of a trajectory;
    trajectories through the same stage ``t-1`` node contribute it once.
    """
    added: dict[int, list[Cut]] = {}
    for t in range(program.T, 1, -1):
        seen, points = set(), []
        for tr in trajectories:
            key = tr.scenario.indices[: t - 2]
            if key not in seen:
                seen.add(key)
                points.append((key, tr.states[t - 2]))
        jobs = [(k, j) for k in range(len(points)) for j in range(program.M(t))]

        def run(job, t=t):
            k, j = job
            return solve_stage(program, approx, t, j, points[k][1], scenario=points[k][0])

        results = _map(run, jobs, workers)
        by_point: dict[int, list[StageSolve]] = {}
        for (k, _), res in zip(jobs, results):
            by_point.setdefault(k, []).append(res)
        added[t] = []
        p = program.probabilities(t)
        for k, (_, x_prev) in enumerate(points):
            solves = by_point[k]
            if approx.multi:
                for res, pool in zip(solves, approx.pools[t]):
                    pool.add_cut(res.cut)
                    pool.add_trial(x_prev)
                    added[t].append(res.cut)
            else:
                theta = float(sum(pj * s.cut.theta for pj, s in zip(p, solves)))
                beta = sum(pj * s.cut.beta for pj, s in zip(p, solves))
                cut = Cut(theta, np.asarray(beta, dtype=float))
                pool = approx.pools[t][0]
                pool.add_cut(cut)
                pool.add_trial(x_prev)
                added[t].append(cut)
    return added


def lower_bound(program, approx) -> float:
    return solve_stage(program, approx, 1, 0, program.x0, check=False).value


def upper_bound(program, approx, S: int, alpha: float, rng, workers: int = 1):
    """``(cost_mean, cost_std, z_sup)`` from ``S`` fresh policy simulations."""
    if S < 2:
        raise ValueError("S must be >= 2")
    scenarios = [sample_scenario(program, rng) for _ in range(S)]
    costs = np.array([tr.cost for tr in forward_pass(program, approx, scenarios, workers)])
    mean = float(costs.mean())
    std = float(np.sqrt(np.mean((costs - mean) ** 2)))
    return mean, std, mean + std / math.sqrt(S) * normal_quantile(1 - alpha)


def policy_value(program, trajectories) -> tuple[float, float]:
    """Exact mean and standard deviation of the policy cost over the full tree."""
    probs = np.array([scenario_probability(program, tr.scenario) for tr in trajectories])
    costs = np.array([tr.cost for tr in trajectories])
    mean = float(probs @ costs)
    return mean, float(np.sqrt(probs @ (costs - mean) ** 2))


@dataclass
class IterationRecord:
    iteration: int
    z_inf: float
    z_sup: float
    cost_mean: float
    cost_std: float
    elapsed_ms: float
    proportions: dict[int, float]
    lp_counts: dict[int, int]


@dataclass
class ConvergenceLog:
    method: str
    config: MethodConfig
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    status: str = "running"
    initial_minorants: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def z_inf(self) -> np.ndarray:
        return np.array([r.z_inf for r in self.records])

    def mean_proportions(self) -> dict[int, float]:
        """Per-stage selected proportion averaged over iterations ``1..k``."""
        rows = self.records[1:]
        if not rows:
            return {}
        return {t: float(np.mean([r.proportions[t] for r in rows])) for t in rows[0].proportions}

    def summary(self) -> dict:
        fin = self.final
        return {
            "method": self.method,
            "label": LABELS.get(self.method, self.method),
            "config": asdict(self.config),
            "seed": self.config.seed,
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            "z_inf": fin.z_inf,
            "z_sup": None if math.isnan(fin.z_sup) else fin.z_sup,
            "elapsed_ms": fin.elapsed_ms,
            "lps_solved": sum(fin.lp_counts.values()),
            "lps_per_stage": {str(t): v for t, v in fin.lp_counts.items()},
            "mean_selected_proportion": {str(t): v for t, v in self.mean_proportions().items()},
            "initial_minorants": self.initial_minorants,
        }


def run(program: StochasticProgram, config: MethodConfig, on_iteration=None) -> ConvergenceLog:
    """Iterate forward/backward passes until ``check_stop`` or ``max_iterations``.

    Forward scenarios come from Philox stream 0 of ``config.seed`` and policy
    simulations from stream 1, so methods sharing a seed see the same forward
    scenario sequence.  Exceptions carry the partial log as ``exc.log``.
    """
    problems = structural_diagnostics(program)
    if problems:
        raise EngineError("; ".join(problems))
    log = ConvergenceLog(config.method_name, config)
    approx = ApproxRecourse(program, config)
    log.initial_minorants = {
        str(t): [{"theta": m.theta, "beta": m.beta.tolist()} for m in ms] for t, ms in approx.initial.items()
    }
    log.approx = approx
    fwd_rng = make_rng(config.seed, 0)
    ub_rng = make_rng(config.seed, 1)
    exhaustive = config.sampling == "exhaustive"
    tree = all_scenarios(program) if exhaustive else None
    start = time.perf_counter()

    def record(i, z_inf, z_sup, mean, std):
        rec = IterationRecord(
            i, z_inf, z_sup, mean, std, (time.perf_counter() - start) * 1e3,
            approx.selected_proportions(), dict(approx.lp_count),
        )
        log.records.append(rec)
        if on_iteration is not None:
            on_iteration(rec)

    try:
        record(0, lower_bound(program, approx), math.nan, math.nan, math.nan)
        for i in range(1, config.max_iterations + 1):
            if exhaustive:
                scenarios = tree
            else:
                scenarios = [sample_scenario(program, fwd_rng) for _ in range(config.N)]
            trajectories = forward_pass(program, approx, scenarios, config.workers)
            z_sup = mean = std = math.nan
            if exhaustive:
                mean, std = policy_value(program, trajectories)
                z_sup = mean
            elif i % config.ub_every == 0:
                mean, std, z_sup = upper_bound(program, approx, config.S, config.alpha, ub_rng, config.workers)
            backward_pass(program, approx, trajectories, config.workers)
            z_inf = lower_bound(program, approx)
            record(i, z_inf, z_sup, mean, std)
            if not math.isnan(z_sup) and check_stop(z_inf, z_sup, config.epsilon):
                log.converged = True
                break
    except Exception as exc:
        log.status = "aborted"
        exc.log = log
        raise
    log.status = "converged" if log.converged else "max_iterations"
    return log
