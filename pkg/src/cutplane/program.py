"""Multistage stochastic linear programs with stagewise independent, finitely
supported noise.

Stage ``t`` (1-based) solves ``min c.x_t + Q_{t+1}(x_t)`` over
``A x_t + B x_{t-1} (=|<=) b``, ``x_t >= 0`` except on free components.
``x_{t-1}`` is the full decision vector of the previous stage (``x0`` for
stage 1).  Stage 1 has a single realization.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lp import LinearProgram, Status, solve

SCHEMA = "cutplane-sp/1"
TREE_CAP = 100_000
ROW_KINDS = ("eq", "le")


class ModelError(ValueError):
    pass


class TreeTooLarge(ModelError):
    def __init__(self, nodes: int, cap: int):
        super().__init__(f"scenario tree has {nodes} nodes, cap is {cap}")
        self.nodes = nodes
        self.cap = cap


@dataclass(frozen=True, eq=False)
class StageRealization:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    c: np.ndarray
    probability: float = 1.0
    row_kinds: tuple[str, ...] = None
    free: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(A.shape[0], -1)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        kinds = tuple(self.row_kinds) if self.row_kinds is not None else ("eq",) * A.shape[0]
        free = np.zeros(A.shape[1], dtype=bool) if self.free is None else np.array(self.free, dtype=bool)
        if A.shape[0] != B.shape[0] or A.shape[0] != b.size or len(kinds) != b.size:
            raise ModelError(
                f"row counts disagree: A has {A.shape[0]}, B has {B.shape[0]}, "
                f"b has {b.size}, row_kinds has {len(kinds)}"
            )
        if c.size != A.shape[1] or free.size != A.shape[1]:
            raise ModelError(f"c has {c.size} entries but A has {A.shape[1]} columns")
        if any(k not in ROW_KINDS for k in kinds):
            raise ModelError(f"row kinds must be one of {ROW_KINDS}")
        if not (self.probability > 0):
            raise ModelError("realization probability must be positive")
        for arr in (A, B, b, c):
            arr.setflags(write=False)
        free.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "probability", float(self.probability))
        object.__setattr__(self, "row_kinds", kinds)
        object.__setattr__(self, "free", free)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def eq_rows(self) -> np.ndarray:
        return np.array([k == "eq" for k in self.row_kinds], dtype=bool)

    def rhs(self, x_prev) -> np.ndarray:
        return self.b - self.B @ np.asarray(x_prev, dtype=float)

    def to_lp(self, x_prev, extra_cost=None) -> LinearProgram:
        """The myopic stage LP at ``x_prev`` (no future cost)."""
        eq = self.eq_rows
        rhs = self.rhs(x_prev)
        c = self.c if extra_cost is None else self.c + extra_cost
        return LinearProgram(
            c, self.A[eq], rhs[eq], self.A[~eq], rhs[~eq],
            lower=np.where(self.free, -np.inf, 0.0),
        )


@dataclass(frozen=True)
class Minorant:
    """Affine lower bound ``theta + beta . x_{t-1}`` for one recourse function."""

    theta: float
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class StochasticProgram:
    x0: np.ndarray
    stages: tuple[tuple[StageRealization, ...], ...]
    terminal_cost: np.ndarray | None = None
    initial_minorants: tuple[tuple[Minorant, ...], ...] | None = None
    name: str = ""

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        stages = tuple(tuple(s) for s in self.stages)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "stages", stages)
        if self.terminal_cost is not None:
            tc = np.array(self.terminal_cost, dtype=float).reshape(-1)
            tc.setflags(write=False)
            object.__setattr__(self, "terminal_cost", tc)
        if self.initial_minorants is not None:
            mins = tuple(
                tuple(Minorant(float(m.theta), np.array(m.beta, dtype=float).reshape(-1)) for m in stage)
                for stage in self.initial_minorants
            )
            object.__setattr__(self, "initial_minorants", mins)

    @property
    def T(self) -> int:
        return len(self.stages)

    def M(self, t: int) -> int:
        return len(self.stages[t - 1])

    def stage(self, t: int) -> tuple[StageRealization, ...]:
        return self.stages[t - 1]

    def realization(self, t: int, j: int) -> StageRealization:
        return self.stages[t - 1][j]

    def probabilities(self, t: int) -> np.ndarray:
        return np.array([r.probability for r in self.stages[t - 1]])

    def state_dim(self, t: int) -> int:
        """Dimension of ``x_{t-1}``, the argument of the stage-``t`` recourse."""
        return self.x0.size if t == 1 else self.stages[t - 2][0].n

    def tree_size(self) -> int:
        total, width = 0, 1
        for t in range(1, self.T + 1):
            width *= self.M(t)
            total += width
        return total

    def scenario_count(self) -> int:
        return math.prod(self.M(t) for t in range(2, self.T + 1))

    def immediate_cost(self, t: int, j: int, x) -> float:
        r = self.realization(t, j)
        cost = float(r.c @ x)
        if t == self.T and self.terminal_cost is not None:
            cost += float(self.terminal_cost @ x)
        return cost


def structural_diagnostics(program: StochasticProgram) -> list[str]:
    """Dimension, probability and stage-1 checks; empty when the model is well formed."""
    out = []
    if program.T < 1:
        return ["program has no stages"]
    empty = [t for t, stage in enumerate(program.stages, start=1) if len(stage) == 0]
    if empty:
        return [f"stage {t}: no realizations" for t in empty]
    for t, stage in enumerate(program.stages, start=1):
        if t == 1 and len(stage) != 1:
            out.append(f"stage 1: must have exactly one realization, found {len(stage)}")
        ref = stage[0]
        want_cols = program.state_dim(t)
        for j, r in enumerate(stage, start=1):
            if r.A.shape != ref.A.shape or r.row_kinds != ref.row_kinds or not np.array_equal(r.free, ref.free):
                out.append(f"stage {t}, realization {j}: dimensions differ from realization 1")
            if r.B.shape[1] != want_cols:
                out.append(
                    f"stage {t}, realization {j}: B has {r.B.shape[1]} columns, "
                    f"previous state has dimension {want_cols}"
                )
            for name in ("A", "B", "b", "c"):
                if not np.all(np.isfinite(getattr(r, name))):
                    out.append(f"stage {t}, realization {j}: {name} has non-finite entries")
        total = sum(r.probability for r in stage)
        if abs(total - 1.0) > 1e-12:
            out.append(f"stage {t}: probabilities sum to {total:.12g}")
    if program.terminal_cost is not None and program.terminal_cost.size != program.stages[-1][0].n:
        out.append(f"terminal_cost has {program.terminal_cost.size} entries, stage {program.T} has {program.stages[-1][0].n} variables")
    if program.initial_minorants is not None:
        if len(program.initial_minorants) != program.T - 1:
            out.append("initial_minorants must list stages 2..T")
        else:
            for t, mins in enumerate(program.initial_minorants, start=2):
                if len(mins) != program.M(t):
                    out.append(f"stage {t}: expected {program.M(t)} initial minorants, found {len(mins)}")
                for m in mins:
                    if m.beta.size != program.state_dim(t):
                        out.append(f"stage {t}: initial minorant has wrong dimension")
    return out


# --- sampling -------------------------------------------------------------

def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox stream; ``(seed, stream)`` pins the sequence on every platform."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class Scenario:
    """Zero-based realization index for each stage ``t = 2..T``."""

    indices: tuple[int, ...]

    def index(self, t: int) -> int:
        return 0 if t == 1 else self.indices[t - 2]


def sample_scenario(program: StochasticProgram, rng: np.random.Generator) -> Scenario:
    idx = []
    for t in range(2, program.T + 1):
        cdf = np.cumsum(program.probabilities(t))
        j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        idx.append(min(j, program.M(t) - 1))
    return Scenario(tuple(idx))


def all_scenarios(program: StochasticProgram) -> list[Scenario]:
    ranges = [range(program.M(t)) for t in range(2, program.T + 1)]
    return [Scenario(tuple(p)) for p in itertools.product(*ranges)]


def scenario_probability(program: StochasticProgram, scenario: Scenario) -> float:
    p = 1.0
    for t in range(2, program.T + 1):
        p *= program.realization(t, scenario.index(t)).probability
    return p


# --- validation -----------------------------------------------------------

def validate(program: StochasticProgram, n_scenarios: int = 20, seed: int = 0) -> list[str]:
    """Structural checks plus a sampled spot check of relatively complete recourse.

    Myopic stage LPs are solved along random scenarios; any infeasible or
    unbounded stage problem is reported.  An empty list is not a proof.
    """
    problems = structural_diagnostics(program)
    if problems:
        return problems
    rng = make_rng(seed, stream=99)
    for s in range(n_scenarios):
        scen = sample_scenario(program, rng)
        x = program.x0
        for t in range(1, program.T + 1):
            j = scen.index(t)
            extra = program.terminal_cost if t == program.T else None
            sol = solve(program.realization(t, j).to_lp(x, extra))
            if sol.status is not Status.OPTIMAL:
                problems.append(
                    f"H2 violated at stage t={t}, realization j={j + 1}, scenario {s}: "
                    f"stage problem is {sol.status.value}"
                )
                break
            x = sol.primal
    return sorted(set(problems), key=problems.index)


# --- deterministic equivalent ---------------------------------------------

@dataclass
class TreeNode:
    stage: int
    path: tuple[int, ...]
    parent: int
    probability: float
    columns: slice


@dataclass
class ExtensiveForm:
    lp: LinearProgram
    nodes: list[TreeNode] = field(default_factory=list)

    def node_solution(self, primal: np.ndarray, k: int) -> np.ndarray:
        return primal[self.nodes[k].columns]


def extensive_form(program: StochasticProgram, cap: int = TREE_CAP) -> ExtensiveForm:
    """Deterministic-equivalent LP over the whole scenario tree."""
    size = program.tree_size()
    if size > cap:
        raise TreeTooLarge(size, cap)
    nodes: list[TreeNode] = []
    col = 0
    frontier = []
    n1 = program.realization(1, 0).n
    nodes.append(TreeNode(1, (), -1, 1.0, slice(col, col + n1)))
    col += n1
    frontier = [0]
    for t in range(2, program.T + 1):
        nxt = []
        for k in frontier:
            parent = nodes[k]
            for j, r in enumerate(program.stage(t)):
                nodes.append(TreeNode(t, parent.path + (j,), k, parent.probability * r.probability, slice(col, col + r.n)))
                col += r.n
                nxt.append(len(nodes) - 1)
        frontier = nxt

    c = np.zeros(col)
    lower = np.zeros(col)
    eq_rows, eq_rhs, ub_rows, ub_rhs = [], [], [], []
    for node in nodes:
        r = program.realization(node.stage, node.path[-1] if node.path else 0)
        c[node.columns] += node.probability * r.c
        if node.stage == program.T and program.terminal_cost is not None:
            c[node.columns] += node.probability * program.terminal_cost
        lower[node.columns] = np.where(r.free, -np.inf, 0.0)
        block = np.zeros((r.A.shape[0], col))
        block[:, node.columns] = r.A
        if node.parent >= 0:
            block[:, nodes[node.parent].columns] = r.B
            rhs = r.b.copy()
        else:
            rhs = r.rhs(program.x0)
        eq = r.eq_rows
        eq_rows.append(block[eq]); eq_rhs.append(rhs[eq])
        ub_rows.append(block[~eq]); ub_rhs.append(rhs[~eq])
    lp = LinearProgram(
        c, np.vstack(eq_rows), np.concatenate(eq_rhs),
        np.vstack(ub_rows), np.concatenate(ub_rhs), lower,
    )
    return ExtensiveForm(lp, nodes)


def solve_extensive(program: StochasticProgram, cap: int = TREE_CAP) -> float:
    ef = extensive_form(program, cap)
    sol = solve(ef.lp)
    if sol.status is not Status.OPTIMAL:
        raise ModelError(f"extensive form is {sol.status.value}")
    return sol.objective_value


# --- model file -----------------------------------------------------------

def to_dict(program: StochasticProgram) -> dict:
    stages = []
    for stage in program.stages:
        stages.append({
            "free": [bool(f) for f in stage[0].free],
            "realizations": [
                {
                    "p": r.probability,
                    "row_kinds": list(r.row_kinds),
                    "A": r.A.tolist(),
                    "B": r.B.tolist(),
                    "b": r.b.tolist(),
                    "c": r.c.tolist(),
                }
                for r in stage
            ],
        })
    doc = {
        "schema": SCHEMA,
        "name": program.name,
        "T": program.T,
        "x0": program.x0.tolist(),
        "terminal_cost": None if program.terminal_cost is None else program.terminal_cost.tolist(),
        "stages": stages,
        "initial_minorants": None,
    }
    if program.initial_minorants is not None:
        doc["initial_minorants"] = [
            [{"theta": m.theta, "beta": m.beta.tolist()} for m in mins]
            for mins in program.initial_minorants
        ]
    return doc


def from_dict(doc: dict) -> StochasticProgram:
    if doc.get("schema") != SCHEMA:
        raise ModelError(f"unsupported schema {doc.get('schema')!r}, expected {SCHEMA!r}")
    try:
        stages = []
        for t, st in enumerate(doc["stages"], start=1):
            reals = []
            for j, r in enumerate(st["realizations"], start=1):
                try:
                    reals.append(StageRealization(
                        r["A"], r["B"], r["b"], r["c"], r["p"],
                        tuple(r["row_kinds"]), st.get("free"),
                    ))
                except (ModelError, ValueError) as exc:
                    raise ModelError(f"stage {t}, realization {j}: {exc}") from None
            stages.append(tuple(reals))
        mins = doc.get("initial_minorants")
        if mins is not None:
            mins = tuple(tuple(Minorant(m["theta"], m["beta"]) for m in s) for s in mins)
        program = StochasticProgram(
            doc["x0"], tuple(stages), doc.get("terminal_cost"), mins, doc.get("name", ""),
        )
    except KeyError as exc:
        raise ModelError(f"missing field {exc}") from None
    if "T" in doc and doc["T"] != program.T:
        raise ModelError(f"T={doc['T']} but {program.T} stages are listed")
    return program


def dumps(program: StochasticProgram) -> str:
    return json.dumps(to_dict(program), indent=1)


def loads(text: str) -> StochasticProgram:
    return from_dict(json.loads(text))


def save(program: StochasticProgram, path) -> None:
    Path(path).write_text(dumps(program) + "\n")


def load(path) -> StochasticProgram:
    return loads(Path(path).read_text())
