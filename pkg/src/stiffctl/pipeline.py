"""End-to-end stiffness learning: segment a demonstration, then search the
task/compliance tradeoff with prior-weighted multi-objective BO.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from . import sim
from .bo import Normalizer, SearchSpace, StiffnessPrior, suggest
from .core import ObjectivePoint, RandomStream, Segmentation, StiffctlError, StiffnessParams, Trajectory
from .pareto import ParetoArchive, hypervolume, pareto_indices
from .segment import KAPPA_SIM, gmm_fit, icsld_fit, prior_from_segmentation, sld_fit

METHODS = ("icsld", "gmm", "sld")
DEFAULT_M = {"door1d": 3, "wipe2d": 2, "track": 2}


class RunFailure(StiffctlError):
    """A segmentation or evaluation error, tagged with where it happened."""

    def __init__(self, where: str, cause: Exception):
        super().__init__(f"{where}: {cause}")
        self.where, self.cause = where, cause


# ---------------------------------------------------------------------------
# task presets

TRACK_SCRIPT = [(0.0, 0.0), (0.5, 0.0), (1.5, 0.12), (2.5, 0.12), (3.5, -0.05), (4.5, -0.05)]


@dataclass(frozen=True)
class Task:
    """Environment, demonstration script and controller settings for one task kind."""

    kind: str
    env: sim.TaskEnv
    script: list
    cfg: sim.ImpedanceConfig

    @property
    def n_axes(self) -> int:
        return self.cfg.n_axes


def make_task(kind: str, dt_sim: float = 1e-3, max_offset: float | None = 0.05, Lambda=3.0) -> Task:
    if kind == "door1d":
        env, script, n = sim.door1d(), sim.DOOR_SCRIPT, 1
    elif kind == "wipe2d":
        env, script, n = sim.wipe2d(), sim.WIPE_SCRIPT, 2
    elif kind == "track":
        n = 1
        script = TRACK_SCRIPT
        ref = sim.interpolate_script(script, 0.05, n)
        env = sim.track(ref, disturbance=[3.0], error_bound=0.05)
    else:
        raise ValueError(f"unknown task kind {kind!r}; valid kinds: {sorted(sim.KINDS)}")
    cfg = sim.ImpedanceConfig(n_axes=n, Lambda=(Lambda,) * n if np.isscalar(Lambda) else tuple(Lambda),
                              dt_sim=dt_sim, max_offset=max_offset)
    task = Task(kind, env, script, cfg)
    if kind == "track":
        # track the noiseless demonstration itself
        demo = sim.generate_demonstration(env, script, cfg)
        task = replace(task, env=replace(env, reference=demo.x.copy()))
    return task


def make_demo(task: Task, seed: int, noise: float = 1e-4) -> Trajectory:
    """Per-seed demonstration with Gaussian position noise."""
    stream = RandomStream(seed, f"demo/{task.kind}")
    return sim.generate_demonstration(task.env, task.script, task.cfg, stream=stream, noise=noise)


@lru_cache(maxsize=None)
def _replay_reward(kind: str, dt_sim: float, max_offset, Lambda) -> float:
    task = make_task(kind, dt_sim, max_offset, Lambda)
    demo = sim.generate_demonstration(task.env, task.script, task.cfg)
    seg = Segmentation.uniform(demo.T, 1)
    theta = StiffnessParams.constant(1, task.n_axes, 1000.0)
    return eval_task(theta, seg, demo, task.env, task.cfg)[0]


def default_points(task: Task, T: int, k_min: float, k_max: float):
    """Reference (worst) and ideal (best) objective corners for normalization.

    Compliance spans ``-T n k_max .. -T n k_min``. The task range starts at 0
    for the binary-reward tasks and at ``-error_bound`` for tracking; its top is
    the reward of replaying the noiseless demonstration (tracking: 0).
    """
    n = task.n_axes
    if task.kind == "track":
        ref_T, ideal_T = -task.env.error_bound, 0.0
    elif task.kind == "wipe2d":
        ref_T, ideal_T = 0.0, float(len(task.env.sites))
    else:
        ref_T = 0.0
        ideal_T = max(1.0, _replay_reward(task.kind, task.cfg.dt_sim, task.cfg.max_offset, task.cfg.Lambda[0]))
    return ObjectivePoint(ref_T, -T * n * k_max), ObjectivePoint(ideal_T, -T * n * k_min)


# ---------------------------------------------------------------------------
# objectives


def eval_compliance(theta: StiffnessParams, seg: Segmentation) -> float:
    """``-sum_t trace(K_{s_t})``."""
    return -float(seg.lengths() @ theta.K.sum(axis=1))


def eval_task(theta: StiffnessParams, seg: Segmentation, demo: Trajectory, env: sim.TaskEnv,
              cfg: sim.ImpedanceConfig, stream: RandomStream | None = None, failure_value: float | None = None):
    """Reward sum of a rollout that replays ``demo`` with stiffness ``theta``.

    Returns ``(y_T, diverged)``. A diverged rollout scores ``failure_value``
    (the reference value) instead of raising when that is given.
    """
    xd = sim.compute_attractors(demo, seg, theta, cfg)
    try:
        _, R = sim.rollout(env, seg, theta, xd, cfg, stream, x0=demo.x[0], v0=sim.initial_velocity(demo))
    except sim.IntegrationDiverged:
        if failure_value is None:
            raise
        return float(failure_value), True
    return float(R.sum()), False


# ---------------------------------------------------------------------------
# configuration and records


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "door1d"
    M: int | None = None
    kappa: float = KAPPA_SIM
    beta: float = 1.0
    N: int = 100
    n_init: int = 8
    seeds: tuple = tuple(range(10))
    method: str = "icsld"
    use_prior: bool = True
    k_min: float = 10.0
    k_max: float = 1000.0
    reference: tuple | None = None
    ideal: tuple | None = None
    dt_sim: float = 1e-3
    max_offset: float | None = 0.05
    Lambda: float = 3.0
    demo_noise: float = 1e-4

    def __post_init__(self):
        if self.M is None:
            object.__setattr__(self, "M", DEFAULT_M.get(self.task, 2))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.task not in sim.KINDS:
            raise ValueError(f"unknown task kind {self.task!r}; valid kinds: {sorted(sim.KINDS)}")
        if self.method not in METHODS:
            raise ValueError(f"unknown segmentation method {self.method!r}; valid: {list(METHODS)}")
        if not self.N >= self.n_init >= 1:
            raise ValueError(f"need N >= n_init >= 1, got N={self.N}, n_init={self.n_init}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not self.kappa > 0 or self.beta < 0:
            raise ValueError("need kappa > 0 and beta >= 0")
        if not 0 < self.k_min < self.k_max:
            raise ValueError("need 0 < k_min < k_max")

    @property
    def prior_active(self) -> bool:
        return self.use_prior and self.beta > 0

    def make_task(self) -> Task:
        return make_task(self.task, self.dt_sim, self.max_offset, self.Lambda)

    def space(self, n_axes: int) -> SearchSpace:
        return SearchSpace(self.M, n_axes, self.k_min, self.k_max)


@dataclass
class Segmented:
    """Segmentation of a demo plus the stiffness estimated on it."""

    method: str
    segmentation: Segmentation
    K_prior: np.ndarray
    at_bound: np.ndarray
    objective: float


@dataclass
class RunRecord:
    """One optimization run.

    ``ms`` is the cumulative simulated episode time (milliseconds) spent on
    evaluations, a deterministic cost measure; host timings are kept
    separately in ``wall_clock``.
    """

    config: ExperimentConfig
    seed: int
    theta: np.ndarray  # (N, d) stiffness, N/m
    Y: np.ndarray  # (N, 2) raw (y_T, y_C)
    hv: np.ndarray
    ms: np.ndarray
    segmented: Segmented | None = None
    diverged: np.ndarray | None = None
    fallback: np.ndarray | None = None
    wall_clock: np.ndarray | None = None
    reference: tuple = (0.0, 0.0)
    ideal: tuple = (1.0, 1.0)

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, len(self.Y) + 1)

    @property
    def pareto(self) -> list[int]:
        return pareto_indices(self.Y)

    @property
    def final_hv(self) -> float:
        return float(self.hv[-1])

    def n_to_fraction(self, frac: float = 0.95) -> int:
        """First n whose hypervolume reaches ``frac`` of the final value."""
        target = frac * self.final_hv
        return int(np.argmax(self.hv >= target - 1e-15)) + 1


# ---------------------------------------------------------------------------
# optimization loop


def segment_demo(demo: Trajectory, method: str, M: int, kappa: float = KAPPA_SIM, bounds=(10.0, 1000.0),
                 Lambda=1.0, stream: RandomStream | None = None) -> Segmented:
    stream = stream or RandomStream(0, "segment")
    if method == "icsld":
        model = icsld_fit(demo, M, kappa, stream=stream, bounds=bounds, Lambda=Lambda)
        return Segmented(method, model.segmentation, model.K, model.at_bound, model.objective)
    if method == "gmm":
        model, seg = gmm_fit(demo, M, stream=stream)
        objective = model.log_likelihood
    elif method == "sld":
        model, seg = sld_fit(demo, M, stream=stream)
        objective = model.objective
    else:
        raise ValueError(f"unknown segmentation method {method!r}")
    K, flags = prior_from_segmentation(demo, seg, kappa, bounds, Lambda)
    return Segmented(method, seg, K, flags, float(objective))


def initial_design(n_init: int, d: int, stream: RandomStream, first=None) -> np.ndarray:
    """Scrambled Sobol points in the unit cube; ``first`` replaces the first row."""
    rng = stream.generator()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # balance warning for non powers of two
        U = qmc.Sobol(d, scramble=True, seed=rng).random(n_init)
    if first is not None:
        U = np.vstack([np.asarray(first, float)[None], U[: n_init - 1]])
    return U


def run_optimization(config: ExperimentConfig, demo: Trajectory | None = None, seed: int | None = None,
                     segmented: Segmented | None = None, task: Task | None = None,
                     on_row=None) -> RunRecord:
    """Segment, build the prior, then evaluate ``n_init`` design points and
    ``N - n_init`` suggestions. Deterministic for a fixed config and seed.

    ``on_row(n, theta, y_T, y_C, hv, ms)`` is called after every evaluation.
    """
    seed = config.seeds[0] if seed is None else int(seed)
    task = task or config.make_task()
    demo = make_demo(task, seed, config.demo_noise) if demo is None else demo
    if demo.n_axes != task.n_axes:
        raise ValueError(f"demo has {demo.n_axes} axes, task {task.kind} expects {task.n_axes}")
    root = RandomStream(seed, "run")
    bounds = (config.k_min, config.k_max)
    if segmented is None:
        try:
            segmented = segment_demo(demo, config.method, config.M, config.kappa, bounds, config.Lambda,
                                     root.fork(f"segment/{config.method}"))
        except Exception as exc:
            raise RunFailure(f"segmentation ({config.method}, seed {seed})", exc) from exc
    seg = segmented.segmentation
    space = config.space(task.n_axes)
    if config.reference is None or config.ideal is None:
        ref, ideal = default_points(task, demo.T, config.k_min, config.k_max)
    ref = ObjectivePoint(*config.reference) if config.reference is not None else ref
    ideal = ObjectivePoint(*config.ideal) if config.ideal is not None else ideal
    norm = Normalizer(tuple(ref), tuple(ideal))
    archive = ParetoArchive(ref, ideal)
    prior = StiffnessPrior(segmented.K_prior, config.k_min, config.k_max, config.beta) if config.prior_active else None

    U0 = initial_design(config.n_init, space.d, root.fork("init"),
                        first=space.to_unit(prior.mode) if prior is not None else None)
    thetas, Y, hv, ms, div, fb, wall = [], [], [], [], [], [], []
    episode_ms = 1000.0 * demo.T * demo.dt
    init_hyper = None

    def evaluate(u, n, fallback):
        theta = space.params(u)
        try:
            y_T, bad = eval_task(theta, seg, demo, task.env, task.cfg, failure_value=ref.y_T)
        except Exception as exc:
            raise RunFailure(f"evaluation n={n} (seed {seed})", exc) from exc
        y_C = eval_compliance(theta, seg)
        archive.add(theta.flat(), ObjectivePoint(y_T, y_C))
        thetas.append(theta.flat())
        Y.append((y_T, y_C))
        hv.append(archive.hypervolume())
        ms.append(episode_ms * len(Y))
        div.append(bad)
        fb.append(fallback)
        if on_row is not None:
            on_row(n, thetas[-1], y_T, y_C, hv[-1], ms[-1])

    for i, u in enumerate(U0):
        t0 = time.perf_counter()
        evaluate(u, i + 1, False)
        wall.append(time.perf_counter() - t0)
    U = list(U0)
    for n in range(config.n_init + 1, config.N + 1):
        t0 = time.perf_counter()
        # the prior exponent decays with the BO iteration count
        s = suggest(np.asarray(U), np.asarray(Y), space, norm, prior, n - config.n_init,
                    root.fork(f"iter/{n}"), init=init_hyper)
        if s.model is not None:
            init_hyper = s.model.hypers
        U.append(s.u)
        evaluate(s.u, n, s.fallback)
        wall.append(time.perf_counter() - t0)
    return RunRecord(config, seed, np.asarray(thetas), np.asarray(Y, float), np.asarray(hv), np.asarray(ms),
                     segmented, np.asarray(div), np.asarray(fb), np.asarray(wall), tuple(ref), tuple(ideal))


# ---------------------------------------------------------------------------
# benchmark grid and sensitivity sweep


@dataclass
class CellResult:
    method: str
    prior: bool
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (seed, message)

    @property
    def final_hv(self) -> np.ndarray:
        return np.array([r.final_hv for r in self.records])

    def curve(self):
        """Per-n quantiles ``(q25, median, q75, min, max)`` of the hypervolume."""
        H = np.array([r.hv for r in self.records])
        return np.quantile(H, [0.25, 0.5, 0.75, 0.0, 1.0], axis=0)

    def union_front(self):
        """Non-dominated points over all seeds, as ``(y, theta)`` pairs."""
        if not self.records:
            return np.zeros((0, 2)), np.zeros((0, 0))
        Y = np.vstack([r.Y for r in self.records])
        TH = np.vstack([r.theta for r in self.records])
        idx = pareto_indices(Y)
        return Y[idx], TH[idx]


@dataclass
class BenchmarkResult:
    task: str
    seeds: tuple
    cells: list

    def cell(self, method: str, prior: bool) -> CellResult:
        for c in self.cells:
            if c.method == method and c.prior == prior:
                return c
        raise KeyError((method, prior))

    def summary_rows(self):
        """``(method, prior, seed, final_hv)`` per run."""
        return [(c.method, c.prior, r.seed, r.final_hv) for c in self.cells for r in c.records]

    def table(self):
        """Per cell: ``(method, prior, mean, std, median, n_runs, n_failed)``."""
        rows = []
        for c in self.cells:
            h = c.final_hv
            stats = (float(h.mean()), float(h.std()), float(np.median(h))) if len(h) else (np.nan,) * 3
            rows.append((c.method, c.prior, *stats, len(h), len(c.failures)))
        return rows


def run_benchmark(task: str = "door1d", seeds=tuple(range(10)), methods=METHODS, priors=(True, False),
                  base: ExperimentConfig | None = None, progress=None, **overrides) -> BenchmarkResult:
    """Run every (method, prior) cell over ``seeds`` on one task.

    Demonstrations are shared by all cells of a seed and segmentations by the
    two prior settings of a method. A failing run is recorded in its cell and
    the grid continues.
    """
    base = replace(base or ExperimentConfig(task=task), task=task, seeds=tuple(seeds), **overrides)
    tk = base.make_task()
    cells = {(m, p): CellResult(m, p) for m in methods for p in priors}
    for seed in base.seeds:
        demo = make_demo(tk, seed, base.demo_noise)
        for m in methods:
            cfg0 = replace(base, method=m)
            try:
                segmented = segment_demo(demo, m, cfg0.M, cfg0.kappa, (cfg0.k_min, cfg0.k_max), cfg0.Lambda,
                                         RandomStream(seed, "run").fork(f"segment/{m}"))
            except Exception as exc:
                for p in priors:
                    cells[m, p].failures.append((seed, f"segmentation: {exc}"))
                continue
            for p in priors:
                cfg = replace(cfg0, use_prior=p)
                try:
                    rec = run_optimization(cfg, demo, seed, segmented=segmented, task=tk)
                except StiffctlError as exc:
                    cells[m, p].failures.append((seed, str(exc)))
                    continue
                cells[m, p].records.append(rec)
                if progress is not None:
                    progress(m, p, seed, rec)
    return BenchmarkResult(task, base.seeds, list(cells.values()))


def run_sensitivity(task: str = "door1d", seeds=tuple(range(10)), Ms=(1, 2, 3, 4), betas=(0.0, 1.0, 10.0, 100.0),
                    base: ExperimentConfig | None = None, progress=None, **overrides):
    """Sweep ``M`` at the base ``beta`` and ``beta`` at the base ``M``.

    Returns rows ``(parameter, value, M, beta, median, mean, std)`` and the
    records keyed by ``(M, beta)``.
    """
    base = replace(base or ExperimentConfig(task=task), task=task, seeds=tuple(seeds), **overrides)
    tk = base.make_task()
    settings = [(M, base.beta) for M in Ms] + [(base.M, float(b)) for b in betas]
    runs = {}
    for M, beta in settings:
        if (M, beta) in runs:
            continue
        cfg = replace(base, M=M, beta=beta)
        runs[M, beta] = []
        for seed in base.seeds:
            rec = run_optimization(cfg, make_demo(tk, seed, base.demo_noise), seed, task=tk)
            runs[M, beta].append(rec)
            if progress is not None:
                progress(M, beta, seed, rec)
    rows = []
    for name, values, key in (("M", Ms, lambda v: (v, base.beta)), ("beta", betas, lambda v: (base.M, float(v)))):
        for v in values:
            h = np.array([r.final_hv for r in runs[key(v)]])
            rows.append((name, v, *key(v), float(np.median(h)), float(h.mean()), float(h.std())))
    return rows, runs
