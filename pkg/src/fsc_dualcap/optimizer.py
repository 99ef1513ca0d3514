"""Search over test-distribution parameters and over pools of Q-graphs."""

import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .channels import check_joint_indecomposable
from .errors import DomainError, Refusal, ResourceError, SearchFailure
from .input_driven import upper_bound_input_driven
from .search import pattern_search
from .testdist import family_for
from .unifilar import SolverOptions, upper_bound_unifilar


def worker_count():
    """Thread cap from ``FSC_DUALCAP_THREADS`` (default 1)."""
    raw = os.environ.get("FSC_DUALCAP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"FSC_DUALCAP_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class SearchSpec:
    """Budget and schedule for ``optimize_test_dist``.

    ``budget`` counts bound evaluations over both stages. Each start gets an
    equal share of the coarse-stage budget so the result does not depend on
    how starts are scheduled. ``constraint`` maps parameters to margins that
    must all be >= 0. Coarse evaluations stop the value iteration after
    ``coarse_patience`` sweeps without progress. ``wall_time`` (seconds) stops early at the cost of
    determinism.
    """

    starts: int = 8
    budget: int = 2000
    seed: int = 0
    step: float = 0.1
    min_step: float = 1e-6
    random_directions: int = 2
    coarse_delta: float = 0.05
    fine_delta: float = 0.02
    coarse_patience: int = 300
    finalists: int = 3
    x0: Optional[Sequence[float]] = None
    constraint: Optional[Callable] = None
    wall_time: Optional[float] = None
    mode: str = "unifilar"
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.budget < 1:
            raise DomainError("budget must be positive")
        if self.starts < 1:
            raise DomainError("starts must be positive")
        if self.finalists < 1:
            raise DomainError("finalists must be positive")
        if not 0 < self.min_step <= self.step:
            raise DomainError("need 0 < min_step <= step")
        if self.fine_delta > self.coarse_delta:
            raise DomainError("fine_delta must not exceed coarse_delta")
        if self.mode not in ("unifilar", "input-driven"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.random_directions < 0:
            raise DomainError("random_directions must be >= 0")
        if self.wall_time is not None and self.wall_time <= 0:
            raise DomainError("wall_time must be positive")


@dataclass
class Evaluation:
    start: int
    stage: str
    delta: float
    params: list
    value: float
    status: str = "ok"


@dataclass
class OptimizeResult:
    params: np.ndarray
    result: object  # BoundResult at the fine resolution
    log: list
    incumbent_trace: list  # best coarse value after each start, in start order

    @property
    def value(self):
        return self.result.value

    @property
    def evaluations(self):
        return len(self.log)


class _OutOfBudget(Exception):
    pass


class _Evaluator:
    """Counts, times and logs bound evaluations for one start."""

    def __init__(self, ch, g, family, spec, start, limit, deadline):
        self.ch, self.g, self.family, self.spec = ch, g, family, spec
        self.start, self.limit, self.deadline = start, limit, deadline
        self.log = []

    def options(self, delta, stage):
        opts = dataclasses.replace(self.spec.options, delta=delta)
        if stage == "coarse":
            opts.patience = min(opts.patience, self.spec.coarse_patience)
        return opts

    def bound(self, params, delta, stage):
        r = self.family(params)
        opts = self.options(delta, stage)
        if self.spec.mode == "input-driven":
            return upper_bound_input_driven(self.ch, self.g, r, opts)
        return upper_bound_unifilar(self.ch, self.g, r, opts)

    def __call__(self, params, delta, stage):
        if len(self.log) >= self.limit:
            raise _OutOfBudget
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise _OutOfBudget
        params = self.family.clamp(params)
        entry = Evaluation(self.start, stage, delta, params.tolist(), math.inf)
        self.log.append(entry)
        if self.spec.constraint is not None and min(self.spec.constraint(params)) < 0:
            entry.status = "constraint"
            return math.inf, None
        try:
            res = self.bound(params, delta, stage)
        except Refusal as exc:
            entry.status = f"refused: {exc.reason}"
            return math.inf, None
        except (DomainError, ResourceError) as exc:
            entry.status = f"failed: {exc}"
            return math.inf, None
        entry.value = res.value
        return res.value, res


def _start_points(family, spec):
    rng = np.random.default_rng(spec.seed)
    first = spec.x0 if spec.x0 is not None else family.default()
    first = family.clamp(first)
    if first.shape != (family.dim,):
        raise DomainError(f"x0 has {first.size} entries, family {family.name!r} needs {family.dim}")
    pts = [first]
    pts += [rng.uniform(family.lower, family.upper, family.dim) for _ in range(spec.starts - 1)]
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.starts)
    return pts, seeds


def _coarse_run(ev, x0, seed, spec):
    rng = np.random.default_rng(seed)
    best = [np.asarray(x0, dtype=float), math.inf]

    def f(x):
        value, _ = ev(x, spec.coarse_delta, "coarse")
        if value < best[1]:
            best[0], best[1] = np.array(x, dtype=float), value
        return value

    try:
        pattern_search(f, x0, ev.family.lower, ev.family.upper, step=spec.step,
                       min_step=spec.min_step, max_evals=ev.limit, rng=rng,
                       random_directions=spec.random_directions)
    except _OutOfBudget:
        pass
    return best[0], best[1]


def optimize_test_dist(ch, g, family, spec=None):
    """Minimise the upper bound over a test-distribution family on ``g``.

    Every start runs a derivative-free pattern search on bounds computed at
    ``coarse_delta``; the best ``finalists`` candidates are then evaluated at
    ``fine_delta`` and the lowest of those is returned. With ``budget`` too
    small for a coarse stage the starting points themselves are the
    finalists (``budget=1`` evaluates only the first start).
    """
    spec = spec or SearchSpec()
    if isinstance(family, str):
        family = family_for(family, g)
    if family.dim < 1:
        raise DomainError("family has no parameters")
    deadline = None if spec.wall_time is None else time.monotonic() + spec.wall_time
    points, seeds = _start_points(family, spec)
    n_fine = min(spec.finalists, spec.budget)
    coarse_total = spec.budget - n_fine
    share = coarse_total // spec.starts

    if share > 0:
        evs = [_Evaluator(ch, g, family, spec, i, share, deadline) for i in range(spec.starts)]
        jobs = list(zip(evs, points, seeds))
        workers = min(worker_count(), len(jobs))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                outcomes = list(pool.map(lambda job: _coarse_run(*job, spec), jobs))
        else:
            outcomes = [_coarse_run(*job, spec) for job in jobs]
        log = [e for ev in evs for e in ev.log]
        trace, best = [], math.inf
        for _, value in outcomes:
            best = min(best, value)
            trace.append(best)
        ranked = sorted(range(len(outcomes)), key=lambda i: (outcomes[i][1], i))
        candidates = [outcomes[i][0] for i in ranked if math.isfinite(outcomes[i][1])][:n_fine]
    else:
        log, trace = [], []
        candidates = points[:n_fine]

    fine = _Evaluator(ch, g, family, spec, -1, n_fine, None)
    best = None
    for x in candidates:
        value, res = fine(x, spec.fine_delta, "fine")
        if res is not None and (best is None or value < best[1].value):
            best = (family.clamp(x), res)
    log += fine.log
    if best is None:
        raise SearchFailure("no start produced a finite bound",
                            [dataclasses.asdict(e) for e in log if e.status != "ok"])
    params, res = best
    res.diagnostics["search"] = {"evaluations": len(log), "starts": spec.starts,
                                 "seed": spec.seed, "family": family.name}
    return OptimizeResult(params, res, log, trace)


@dataclass
class RankEntry:
    graph: object
    family: str
    value: float
    outcome: OptimizeResult


@dataclass
class PoolRanking:
    entries: list  # RankEntry, best bound first
    skipped: list  # (pool index, graph, reason)

    @property
    def best(self):
        return self.entries[0]


def rank_qgraph_pool(ch, pool, families="full", spec=None):
    """Optimise each graph in ``pool`` and sort by the best bound found.

    ``families`` is a family name for every graph or a list of names, one
    per graph. Graphs failing joint indecomposability, or whose search finds
    no finite bound, are skipped with a reason.
    """
    pool = list(pool)
    if not pool:
        raise DomainError("empty Q-graph pool")
    if isinstance(families, str):
        families = [families] * len(pool)
    if len(families) != len(pool):
        raise DomainError("need one family per graph")
    spec = spec or SearchSpec()
    scored, skipped = [], []
    for i, (g, fam) in enumerate(zip(pool, families)):
        joint = check_joint_indecomposable(ch, g, spec.options.n_max)
        if spec.options.require_indecomposable and not joint.holds:
            reason = "not-jointly-indecomposable" if joint.holds is False else "indecomposability-undecided"
            skipped.append((i, g, reason))
            continue
        try:
            out = optimize_test_dist(ch, g, family_for(fam, g), spec)
        except (SearchFailure, DomainError) as exc:
            skipped.append((i, g, str(exc)))
            continue
        scored.append((out.value, i, RankEntry(g, fam, out.value, out)))
    if not scored:
        raise SearchFailure("no graph in the pool produced a bound",
                            [(i, reason) for i, _, reason in skipped])
    scored.sort(key=lambda t: (t[0], t[1]))
    return PoolRanking([e for _, _, e in scored], skipped)
