"""Cut storage and trial-point based cut selection.

A pool holds every cut ever computed for one recourse function together with
the trial points visited so far.  For each trial point it tracks the best cut
value and the ascending list of cuts attaining it (up to ``epsilon0``).  The
selector picks positions inside each such list; the union over trial points
is the selected set used when the pool enters a stage LP.

Values ``v1, v2`` at a trial point are tied when
``|v2 - v1| <= epsilon0 * max(1, |v1|)`` and ``v2`` beats ``v1`` when
``v2 > v1 + epsilon0 * max(1, |v1|)``; ``epsilon0 = 0`` gives exact comparisons.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

POOL_SCHEMA = "cutplane-pool/1"


class DimensionMismatch(ValueError):
    pass


class EmptyPool(ValueError):
    pass


@dataclass(frozen=True)
class Cut:
    theta: float
    beta: np.ndarray
    birth_iteration: int = 0  # 0: next free number in the receiving pool

    def __call__(self, x) -> float:
        return self.theta + float(self.beta @ x)


@dataclass(frozen=True)
class Selector:
    """Nested family ``S(m)`` of positions (1-based) inside an argmax list.

    ``level1``: all tied cuts.  ``lml1``: the oldest only.  ``prefix``: the
    ``horizon`` oldest.  ``newest`` keeps the ``horizon`` most recent ties;
    it is not nested (``S(m)`` is not a subset of ``S(m+1)``) so finite
    termination is not guaranteed, and it must be requested with
    ``unsafe=True``.
    """

    kind: str = "level1"
    horizon: int | None = None
    unsafe: bool = False

    def __post_init__(self):
        if self.kind not in ("level1", "lml1", "prefix", "newest"):
            raise ValueError(f"unknown selector {self.kind!r}")
        if self.kind in ("prefix", "newest") and (self.horizon is None or self.horizon < 1):
            raise ValueError(f"{self.kind} selector needs a horizon >= 1")
        if self.kind == "newest" and not self.unsafe:
            raise ValueError("the newest-H selector breaks nestedness; pass unsafe=True to use it")

    @classmethod
    def parse(cls, text: str | None) -> Selector | None:
        if text is None or text in ("", "none"):
            return None
        if text in ("level1", "lml1"):
            return cls(text)
        name, _, h = text.partition(":")
        if name == "prefix":
            return cls("prefix", int(h))
        if name == "newest":
            return cls("newest", int(h), unsafe=True)
        raise ValueError(f"unknown selector {text!r}")

    def __str__(self) -> str:
        return self.kind if self.horizon is None else f"{self.kind}:{self.horizon}"

    def positions(self, m: int) -> range:
        """0-based positions ``S(m) - 1`` inside an argmax list of length ``m``."""
        if m == 0:
            return range(0)
        if self.kind == "level1":
            return range(m)
        if self.kind == "lml1":
            return range(1)
        if self.kind == "prefix":
            return range(min(m, self.horizon))
        return range(max(0, m - self.horizon), m)


@dataclass
class TrialRecord:
    point: np.ndarray
    best_value: float
    argmax: list[int]


class CutPool:
    """Append-only store of cuts for one function of a ``dim``-dimensional state.

    With ``selector=None`` every cut is active and no argmax bookkeeping is done.
    """

    def __init__(self, dim: int, selector: Selector | None = None, epsilon0: float = 1e-6):
        self.dim = int(dim)
        self.selector = selector
        self.epsilon0 = float(epsilon0)
        self._theta = np.zeros(16)
        self._beta = np.zeros((16, self.dim))
        self._birth: list[int] = []
        self._points = np.zeros((16, self.dim))
        self.trials: list[TrialRecord] = []
        self._refcount = np.zeros(16, dtype=np.int64)
        self._cache = None

    # -- storage -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._birth)

    @property
    def num_trials(self) -> int:
        return len(self.trials)

    @property
    def theta(self) -> np.ndarray:
        return self._theta[: len(self)]

    @property
    def beta(self) -> np.ndarray:
        return self._beta[: len(self)]

    @property
    def points(self) -> np.ndarray:
        return self._points[: self.num_trials]

    def cut(self, i: int) -> Cut:
        return Cut(float(self._theta[i]), self._beta[i].copy(), self._birth[i])

    @property
    def cuts(self) -> list[Cut]:
        return [self.cut(i) for i in range(len(self))]

    @property
    def selected(self) -> np.ndarray:
        """Boolean mask over stored cuts."""
        if self.selector is None:
            return np.ones(len(self), dtype=bool)
        return self._refcount[: len(self)] > 0

    def selected_cuts(self) -> tuple[np.ndarray, np.ndarray]:
        """``(theta, beta)`` arrays of the selected cuts, cached between writes."""
        if self._cache is None:
            mask = self.selected
            self._cache = (self.theta[mask].copy(), self.beta[mask].copy())
        return self._cache

    def _grow(self, arr: np.ndarray, need: int) -> np.ndarray:
        if need <= arr.shape[0]:
            return arr
        new = np.zeros((max(need, 2 * arr.shape[0]),) + arr.shape[1:], dtype=arr.dtype)
        new[: arr.shape[0]] = arr
        return new

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise DimensionMismatch(f"point has dimension {x.size}, pool expects {self.dim}")
        return x

    def _tol(self, m: float) -> float:
        return self.epsilon0 * max(1.0, abs(m))

    def _chosen(self, argmax: list[int]) -> list[int]:
        return [argmax[p] for p in self.selector.positions(len(argmax))]

    def _set_argmax(self, rec: TrialRecord, new: list[int]) -> None:
        for i in self._chosen(rec.argmax):
            self._refcount[i] -= 1
        rec.argmax = new
        for i in self._chosen(new):
            self._refcount[i] += 1

    # -- operations --------------------------------------------------------

    def add_cut(self, cut: Cut) -> np.ndarray:
        """Store ``cut`` and update every trial record; returns the selected mask."""
        beta = self._check_point(cut.beta)
        last = self._birth[-1] if self._birth else 0
        birth = int(cut.birth_iteration) if cut.birth_iteration else last + 1
        if birth <= last:
            raise ValueError("birth_iteration must increase across insertions")
        k = len(self)
        self._theta = self._grow(self._theta, k + 1)
        self._beta = self._grow(self._beta, k + 1)
        self._refcount = self._grow(self._refcount, k + 1)
        self._theta[k] = cut.theta
        self._beta[k] = beta
        self._birth.append(birth)
        self._cache = None
        if self.selector is None or not self.trials:
            return self.selected

        values = cut.theta + self.points @ beta
        keep_ties = self.selector.kind != "lml1"
        for rec, v in zip(self.trials, values):
            m = rec.best_value
            if m == -np.inf:
                rec.best_value = float(v)
                self._set_argmax(rec, [k])
                continue
            tol = self._tol(m)
            if v > m + tol:
                rec.best_value = float(v)
                self._set_argmax(rec, [k])
            elif keep_ties and abs(v - m) <= tol:
                self._set_argmax(rec, rec.argmax + [k])
        return self.selected

    def add_trial(self, point) -> int:
        """Record a trial point and its current argmax list; returns its index.

        Level 1 style selectors scan the newest cut first and then the rest in
        ascending order, so a cut added just before its own trial point is the
        reference value.  LML1 scans from the oldest cut with strict
        improvement only, so the oldest maximal cut wins.
        """
        x = self._check_point(point)
        i = self.num_trials
        self._points = self._grow(self._points, i + 1)
        self._points[i] = x
        rec = TrialRecord(x.copy(), -np.inf, [])
        self.trials.append(rec)
        k = len(self)
        if self.selector is None or k == 0:
            return i
        self._cache = None
        values = self.theta + self.beta @ x
        if self.selector.kind == "lml1":
            best, arg = values[0], 0
            for ell in range(1, k):
                if values[ell] > best + self._tol(best):
                    best, arg = values[ell], ell
            rec.best_value = float(best)
            self._set_argmax(rec, [arg])
            return i
        best, arg = values[k - 1], [k - 1]
        for ell in range(k - 1):
            v = values[ell]
            tol = self._tol(best)
            if v > best + tol:
                best, arg = v, [ell]
            elif abs(v - best) <= tol:
                arg.append(ell)
        rec.best_value = float(best)
        self._set_argmax(rec, sorted(arg))
        return i

    def evaluate(self, point, mode: str = "selected") -> float:
        """Max of the selected cuts (``mode="selected"``) or of all cuts (``"all"``)."""
        if len(self) == 0:
            raise EmptyPool("pool has no cuts")
        x = self._check_point(point)
        if mode == "all":
            return float(np.max(self.theta + self.beta @ x))
        if mode != "selected":
            raise ValueError(f"unknown mode {mode!r}")
        theta, beta = self.selected_cuts()
        return float(np.max(theta + beta @ x))

    def selection_stats(self) -> tuple[int, int, float]:
        total = len(self)
        chosen = int(self.selected.sum())
        return total, chosen, (chosen / total if total else 0.0)

    # -- reference recomputation ----------------------------------------------

    def recompute_selected(self) -> np.ndarray:
        """Selected mask rebuilt from the stored argmax lists."""
        mask = np.zeros(len(self), dtype=bool)
        if self.selector is None:
            mask[:] = True
            return mask
        for rec in self.trials:
            for i in self._chosen(rec.argmax):
                mask[i] = True
        return mask

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": POOL_SCHEMA,
            "dim": self.dim,
            "selector": None if self.selector is None else str(self.selector),
            "epsilon0": self.epsilon0,
            "cuts": [
                {"theta": float(self._theta[i]), "beta": self._beta[i].tolist(), "birth": self._birth[i]}
                for i in range(len(self))
            ],
            "trials": [
                {"point": r.point.tolist(), "best": r.best_value if np.isfinite(r.best_value) else None,
                 "argmax": list(r.argmax)}
                for r in self.trials
            ],
            "selected": [int(i) for i in np.flatnonzero(self.selected)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> CutPool:
        if doc.get("schema") != POOL_SCHEMA:
            raise ValueError(f"unsupported pool schema {doc.get('schema')!r}")
        pool = cls(doc["dim"], Selector.parse(doc["selector"]), doc["epsilon0"])
        n = len(doc["cuts"])
        pool._theta = np.zeros(max(n, 16))
        pool._beta = np.zeros((max(n, 16), pool.dim))
        pool._refcount = np.zeros(max(n, 16), dtype=np.int64)
        for i, c in enumerate(doc["cuts"]):
            pool._theta[i] = c["theta"]
            pool._beta[i] = c["beta"]
            pool._birth.append(int(c["birth"]))
        pts = [t["point"] for t in doc["trials"]]
        pool._points = np.zeros((max(len(pts), 16), pool.dim))
        for i, t in enumerate(doc["trials"]):
            pool._points[i] = t["point"]
            best = -np.inf if t["best"] is None else float(t["best"])
            rec = TrialRecord(np.array(t["point"], dtype=float), best, [])
            pool.trials.append(rec)
            if pool.selector is not None:
                pool._set_argmax(rec, [int(a) for a in t["argmax"]])
            else:
                rec.argmax = [int(a) for a in t["argmax"]]
        if sorted(doc["selected"]) != [int(i) for i in np.flatnonzero(pool.selected)]:
            raise ValueError("stored selection does not match the trial records")
        return pool

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> CutPool:
        return cls.from_dict(json.loads(text))
