"""Regression oracles, synthetic data, and the gradient-descent driver.

Samples follow the convention that the label is the (p+1)-th coordinate of
each row.  The gradient oracles take weighted index slices so they can serve
directly as the engine's coded-gradient evaluator: they are additive over
disjoint slices and homogeneous in the weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import engine
from .allocation import WeightedSlice, cr_allocate
from .codes import build_encoding
from .latency import LatencyConfig, simulate_iteration
from .topology import RegularTree, StragglerPattern, build_tree

__all__ = [
    "Dataset",
    "GDConfig",
    "TraceRow",
    "generate_synthetic",
    "load_dataset_csv",
    "linear_grad",
    "logistic_grad",
    "make_oracle",
    "gd_run",
    "trace_to_csv",
]

FULL_GRADIENT_SCHEMES = ("cr", "gc", "umw", "rar")


@dataclass(frozen=True)
class Dataset:
    """d samples of p features plus a trailing label column."""

    points: np.ndarray = field(repr=False)
    origin: str = "synthetic"

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 2:
            raise ValueError(f"expected a (d, p+1) sample matrix, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def d(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1] - 1

    @property
    def features(self) -> np.ndarray:
        return self.points[:, :-1]

    @property
    def labels(self) -> np.ndarray:
        return self.points[:, -1]


def generate_synthetic(
    d: int,
    p: int,
    seed: int,
    noise_scale: float = 1.0,
    theta_star: np.ndarray | None = None,
) -> tuple[Dataset, np.ndarray]:
    """Standard-normal features and true model, label = <x, theta*> + noise.

    `noise_scale=0` and an explicit `theta_star` are test hooks for exactly
    reproducible labels.
    """
    if d < 1 or p < 1:
        raise ValueError(f"need d, p >= 1, got d={d}, p={p}")
    rng = np.random.default_rng(seed)
    if theta_star is None:
        theta_star = rng.standard_normal(p)
    else:
        theta_star = np.asarray(theta_star, dtype=float)
    X = rng.standard_normal((d, p))
    z = rng.standard_normal(d) * noise_scale
    points = np.column_stack([X, X @ theta_star + z])
    return Dataset(points=points, origin="synthetic"), theta_star


def load_dataset_csv(path) -> Dataset:
    """Ingest samples from CSV: one row per sample, p feature columns then label."""
    with open(path) as fh:
        rows = [[float(tok) for tok in line] for line in csv.reader(fh) if line]
    return Dataset(points=np.array(rows), origin="ingested")


def linear_grad(
    theta: np.ndarray, slices: Sequence[WeightedSlice], dataset: Dataset
) -> np.ndarray:
    """Squared-loss gradient, weighted per slice: sum_w w * X'(X theta - y)."""
    out = np.zeros(dataset.p)
    for s in slices:
        X = dataset.features[s.start : s.stop]
        resid = X @ theta - dataset.labels[s.start : s.stop]
        out += s.weight * (X.T @ resid)
    return out


def logistic_grad(
    theta: np.ndarray, slices: Sequence[WeightedSlice], dataset: Dataset
) -> np.ndarray:
    """Logistic-loss gradient for 0/1 labels: sum_w w * X'(sigmoid(X theta) - y)."""
    out = np.zeros(dataset.p)
    for s in slices:
        X = dataset.features[s.start : s.stop]
        z = X @ theta
        resid = 1.0 / (1.0 + np.exp(-z)) - dataset.labels[s.start : s.stop]
        out += s.weight * (X.T @ resid)
    return out


def make_oracle(loss: str, dataset: Dataset) -> engine.GradientOracle:
    if loss == "linear":
        return lambda theta, slices: linear_grad(theta, slices, dataset)
    if loss == "logistic":
        return lambda theta, slices: logistic_grad(theta, slices, dataset)
    raise ValueError(f"unknown loss {loss!r}")


@dataclass(frozen=True)
class GDConfig:
    """Driver settings: scheme and its straggler parameters, step schedule,
    iteration budget, regularization, optional timing model."""

    scheme: str
    iterations: int
    step_size: float | None = None
    c1: float | None = None  # schedule c1 / (t + c2), used when step_size is None
    c2: float | None = None
    lam: float = 0.0
    loss: str = "linear"
    n: int | None = None
    L: int | None = None
    s: int = 0
    N: int | None = None
    S: int = 0
    seed: int = 0
    latency: LatencyConfig | None = None

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.step_size is None and (self.c1 is None or self.c2 is None):
            raise ValueError("set step_size or the (c1, c2) schedule")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step size must be positive")

    def step(self, t: int) -> float:
        if self.step_size is not None:
            return self.step_size
        return self.c1 / (t + self.c2)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    theta: np.ndarray = field(repr=False)
    rer: float
    ner: float
    sim_time: float


def _squared_ratio(num: np.ndarray, den: np.ndarray) -> float:
    d = float(den @ den)
    if d == 0.0:
        return float("nan")
    return float(num @ num) / d


def _draw_tree_pattern(tree: RegularTree, s: int, rng: np.random.Generator) -> StragglerPattern:
    mapping = {}
    for parent in tree.parents():
        kids = tree.children(parent)
        picks = rng.choice(tree.n, size=s, replace=False)
        if s:
            mapping[parent] = frozenset(kids[int(j)] for j in picks)
    return StragglerPattern(mapping)


def gd_run(
    dataset: Dataset,
    config: GDConfig,
    theta_star: np.ndarray | None = None,
) -> list[TraceRow]:
    """Gradient descent where each iteration's gradient comes from the selected
    aggregation scheme under a freshly drawn straggler pattern.

    Full-gradient schemes give identical trajectories regardless of the
    pattern; the partial-aggregation scheme intentionally diverges.  When a
    timing model is configured, per-iteration completion times accumulate
    into the trace's simulated clock.
    """
    scheme = config.scheme
    d = dataset.d
    oracle = make_oracle(config.loss, dataset)
    rng = np.random.default_rng(config.seed)

    if scheme == "cr":
        tree = build_tree(config.n, config.L)
        B = build_encoding(config.n, config.s, config.seed)
        assignment = cr_allocate(tree, config.s, d, B=B)
        def aggregate(theta):
            pattern = _draw_tree_pattern(tree, config.s, rng)
            return engine.cr_execute(tree, assignment, B, pattern, oracle, theta)
        sim_args = ("cr", tree, config.s)
    elif scheme == "gc":
        B = build_encoding(config.N, config.S, config.seed)
        def aggregate(theta):
            stragglers = rng.choice(config.N, size=config.S, replace=False)
            return engine.gc_execute(config.N, config.S, B, stragglers, oracle, theta, d)
        sim_args = ("gc", config.N, config.S)
    elif scheme == "umw":
        def aggregate(theta):
            return engine.umw_execute(config.N, oracle, theta, d)
        sim_args = ("umw", config.N, 0)
    elif scheme == "rar":
        def aggregate(theta):
            copies = engine.rar_execute(config.N, oracle, theta, d)
            return copies[0]
        sim_args = ("rar", config.N, 0)
    elif scheme == "sgd":
        def aggregate(theta):
            stragglers = rng.choice(config.N, size=config.S, replace=False)
            return engine.sgd_execute(config.N, config.S, stragglers, oracle, theta, d)
        sim_args = ("sgd", config.N, config.S)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    theta = np.zeros(dataset.p)
    clock = 0.0
    trace: list[TraceRow] = []
    for t in range(1, config.iterations + 1):
        g = aggregate(theta)
        new_theta = theta - config.step(t) * (g + config.lam * theta)
        if config.latency is not None:
            sim_scheme, topo, resilience = sim_args
            outcome = simulate_iteration(sim_scheme, topo, config.latency, resilience, trial=t)
            clock += outcome.completion_time
        rer = _squared_ratio(new_theta - theta, theta)
        ner = (
            _squared_ratio(new_theta - theta_star, theta_star)
            if theta_star is not None
            else float("nan")
        )
        theta = new_theta
        trace.append(TraceRow(iteration=t, theta=theta.copy(), rer=rer, ner=ner, sim_time=clock))
    return trace


def trace_to_csv(trace: Sequence[TraceRow], path) -> None:
    """Trace dump: iter, wall_sim_time, rer, ner."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "wall_sim_time", "rer", "ner"])
        for row in trace:
            writer.writerow([row.iteration, repr(row.sim_time), repr(row.rer), repr(row.ner)])
