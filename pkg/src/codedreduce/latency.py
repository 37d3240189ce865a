"""Iteration-time simulation under shifted-exponential compute and a
single-port receiver model, plus the matching closed-form envelopes.

A worker loaded with d_i points finishes computing at
``a*d_i + Exp(rate mu/d_i)``.  Each parent receives over one port: a message
occupies it for exactly t_c, waiting children are served in readiness order
(ties by child index), and a coded parent stops listening after its quorum.
Internal nodes may receive while still computing; sending upward requires
both their own compute and the quorum.

The FCFS port admits a closed form used by the vectorized Monte Carlo path:
with sorted ready times r_(0) <= r_(1) <= ..., the k-th service (0-based)
ends at ``max_{j<=k}(r_(j) - j*t_c) + (k+1)*t_c``.  The event-driven path
replays the same queue explicitly and doubles as a cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from math import log
from typing import NamedTuple

import numpy as np

from .allocation import r_cr, r_gc
from .topology import MASTER, NodeId, RegularTree

__all__ = [
    "LatencyConfig",
    "SimEvent",
    "SimOutcome",
    "harmonic",
    "sample_comp_time",
    "expected_order_stat",
    "simulate_iteration",
    "cr_bounds",
    "mc_expected_latency",
    "events_to_csv",
]

SCHEMES = ("cr", "gc", "umw", "sgd", "rar")


@dataclass(frozen=True)
class LatencyConfig:
    """Timing-model parameters: shift per point, exponential rate scale,
    per-message cost, dataset size, base seed."""

    a: float
    mu: float
    t_c: float
    d: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.a < 0:
            raise ValueError(f"shift coefficient must be >= 0, got {self.a}")
        if self.mu <= 0:
            raise ValueError(f"exponential rate scale must be > 0, got {self.mu}")
        if self.t_c < 0:
            raise ValueError(f"message cost must be >= 0, got {self.t_c}")
        if self.d <= 0:
            raise ValueError(f"dataset size must be > 0, got {self.d}")


class SimEvent(NamedTuple):
    node: str
    event_type: str  # compute | send | recv | allreduce
    t_start: float
    t_end: float


@dataclass(frozen=True)
class SimOutcome:
    completion_time: float
    events: tuple[SimEvent, ...] = field(repr=False)


def harmonic(k: int) -> float:
    """H_k = 1 + 1/2 + ... + 1/k, with H_0 = 0."""
    if k < 0:
        raise ValueError("harmonic number needs k >= 0")
    return float(sum(Fraction(1, i) for i in range(1, k + 1)))


def sample_comp_time(cfg: LatencyConfig, d_i: float, rng: np.random.Generator) -> float:
    """One compute-time draw for a worker holding d_i points:
    shift a*d_i plus an exponential with rate mu/d_i (mean a*d_i + d_i/mu)."""
    if d_i <= 0:
        raise ValueError(f"load must be positive, got {d_i}")
    return cfg.a * d_i + rng.exponential(d_i / cfg.mu)


def expected_order_stat(cfg: LatencyConfig, n: int, s: int, r) -> float:
    """Mean time until n-s of n equally loaded workers finish:
    (r*d/mu) * (H_n - H_s) + a*r*d."""
    if not 0 <= s < n:
        raise ValueError(f"need 0 <= s < n, got n={n}, s={s}")
    load = float(r) * cfg.d
    return (load / cfg.mu) * (harmonic(n) - harmonic(s)) + cfg.a * load


def _port_finish_times(ready: np.ndarray, t_c: float) -> np.ndarray:
    """Service completion times of an FCFS single port along the last axis.

    `ready` must already be sorted ascending along the last axis; entry k of
    the result is when the k-th served message finishes.
    """
    k = np.arange(ready.shape[-1], dtype=float)
    return np.maximum.accumulate(ready - k * t_c, axis=-1) + (k + 1) * t_c


def _draw_times(cfg: LatencyConfig, loads: np.ndarray, trial: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed + trial)
    return cfg.a * loads + rng.exponential(loads / cfg.mu)


def _scheme_loads(scheme: str, topo, resilience: int, cfg: LatencyConfig) -> np.ndarray:
    if scheme == "cr":
        tree: RegularTree = topo
        load = float(r_cr(tree.n, tree.L, resilience)) * cfg.d
        return np.full(tree.num_workers, load)
    N = int(topo)
    if scheme in ("gc", "sgd") and not 0 <= resilience < N:
        raise ValueError(f"need 0 <= S < N, got N={N}, S={resilience}")
    if scheme == "gc":
        load = float(r_gc(N, resilience)) * cfg.d
    else:  # umw, sgd, rar share the uncoded uniform split
        load = cfg.d / N
    return np.full(N, load)


def _cr_completions(tree: RegularTree, s: int, t_c: float, T: np.ndarray) -> np.ndarray:
    """Completion times for a batch of trials; T has shape (trials, N) in
    layer-major worker order."""
    n, L = tree.n, tree.L
    need = n - s
    trials = T.shape[0]
    offsets = np.concatenate([[0], np.cumsum([n**l for l in range(1, L + 1)])])
    ready = T[:, offsets[L - 1] : offsets[L]]  # leaves
    for layer in range(L, 0, -1):
        groups = ready.reshape(trials, n ** (layer - 1), n)
        finish = _port_finish_times(np.sort(groups, axis=-1), t_c)
        recv_done = finish[..., need - 1]
        if layer == 1:
            return recv_done[:, 0]
        own = T[:, offsets[layer - 2] : offsets[layer - 1]]
        ready = np.maximum(own, recv_done)
    raise AssertionError("unreachable")


def _batch_completions(
    scheme: str, topo, cfg: LatencyConfig, resilience: int, trials: range
) -> np.ndarray:
    loads = _scheme_loads(scheme, topo, resilience, cfg)
    T = np.stack([_draw_times(cfg, loads, t) for t in trials])
    if scheme == "cr":
        return _cr_completions(topo, resilience, cfg.t_c, T)
    N = int(topo)
    if scheme == "rar":
        return T.max(axis=1) + 2 * (N - 1) * (cfg.t_c / N)
    need = {"gc": N - resilience, "sgd": N - resilience, "umw": N}[scheme]
    finish = _port_finish_times(np.sort(T, axis=-1), cfg.t_c)
    return finish[:, need - 1]


def _serve_port(
    parent: str,
    arrivals: list[tuple[float, int, str]],
    need: int,
    t_c: float,
    events: list[SimEvent],
) -> float:
    """Event replay of one FCFS port; logs recv/send pairs, returns the time
    the `need`-th message finishes."""
    port_free = 0.0
    done = 0.0
    for count, (ready, _pos, child) in enumerate(sorted(arrivals)):
        if count >= need:
            break  # port closed, message never sent
        start = max(port_free, ready)
        port_free = start + t_c
        events.append(SimEvent(child, "send", start, port_free))
        events.append(SimEvent(parent, "recv", start, port_free))
        done = port_free
    return done


def simulate_iteration(
    scheme: str,
    topo,
    cfg: LatencyConfig,
    resilience: int = 0,
    assignment=None,
    trial: int = 0,
) -> SimOutcome:
    """Event-driven simulation of one aggregation round.

    `topo` is a RegularTree for the tree-coded scheme and a worker count for
    the flat ones; `resilience` is the per-parent (or total) straggler
    tolerance where the scheme has one.  Stragglers are slow, never absent:
    parents simply stop listening once their quorum is in.  Trial `t` draws
    from a generator seeded with ``cfg.seed + t``, so outcomes are
    reproducible and trials are independent.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    loads = _scheme_loads(scheme, topo, resilience, cfg)
    if scheme == "cr" and assignment is not None:
        loads = np.asarray(_assignment_loads(topo, assignment), dtype=float)
    T = _draw_times(cfg, loads, trial)
    events: list[SimEvent] = []

    if scheme == "rar":
        N = int(topo)
        for i in range(N):
            events.append(SimEvent(str(i), "compute", 0.0, float(T[i])))
        barrier = float(T.max())
        completion = barrier + 2 * (N - 1) * (cfg.t_c / N)
        events.append(SimEvent("ring", "allreduce", barrier, completion))
        return SimOutcome(completion, tuple(events))

    if scheme in ("gc", "umw", "sgd"):
        N = int(topo)
        need = N if scheme == "umw" else N - resilience
        for i in range(N):
            events.append(SimEvent(str(i), "compute", 0.0, float(T[i])))
        arrivals = [(float(T[i]), i, str(i)) for i in range(N)]
        completion = _serve_port("master", arrivals, need, cfg.t_c, events)
        return SimOutcome(completion, tuple(events))

    tree: RegularTree = topo
    need = tree.n - resilience
    idx = {node: i for i, node in enumerate(tree.workers())}
    for node, i in idx.items():
        events.append(SimEvent(str(node), "compute", 0.0, float(T[i])))
    ready: dict[NodeId, float] = {}
    for layer in range(tree.L, 0, -1):
        for node in tree.layer_nodes(layer):
            own = float(T[idx[node]])
            if tree.is_leaf(node):
                ready[node] = own
            else:
                arrivals = [
                    (ready[c], pos, str(c)) for pos, c in enumerate(tree.children(node))
                ]
                recv_done = _serve_port(str(node), arrivals, need, cfg.t_c, events)
                ready[node] = max(own, recv_done)
    arrivals = [(ready[c], pos, str(c)) for pos, c in enumerate(tree.children(MASTER))]
    completion = _serve_port(str(MASTER), arrivals, need, cfg.t_c, events)
    return SimOutcome(completion, tuple(events))


def _assignment_loads(tree: RegularTree, assignment):
    from .allocation import slice_count

    return [slice_count(assignment.local[node]) for node in tree.workers()]


def cr_bounds(cfg: LatencyConfig, n: int, L: int, s: int) -> tuple[float, float]:
    """Envelope on the tree-coded scheme's expected round time.

    lower = (r*d/mu) ln(1/alpha) + a*r*d + (n(1-alpha) + L - 1) t_c
    upper = (r*d/mu) ln(1/alpha) + a*r*d + n*L*t_c

    Vanishing correction terms are dropped, so at finite n these are
    asymptotic envelopes; tests apply slack rather than claiming exactness.
    """
    alpha = s / n
    if not 0 < alpha < 1:
        raise ValueError(f"straggler ratio s/n must be in (0,1), got {alpha}")
    load = float(r_cr(n, L, s)) * cfg.d
    base = (load / cfg.mu) * log(1 / alpha) + cfg.a * load
    lower = base + (n * (1 - alpha) + L - 1) * cfg.t_c
    upper = base + n * L * cfg.t_c
    return lower, upper


def mc_expected_latency(
    scheme: str,
    topo,
    cfg: LatencyConfig,
    resilience: int = 0,
    trials: int = 1000,
    chunk: int = 256,
) -> tuple[float, float]:
    """Monte Carlo mean completion time and normal-approximation 95% half-width
    over `trials` independent rounds (trial t seeded with cfg.seed + t)."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    samples = np.concatenate(
        [
            _batch_completions(scheme, topo, cfg, resilience, range(lo, min(lo + chunk, trials)))
            for lo in range(0, trials, chunk)
        ]
    )
    mean = float(samples.mean())
    if trials == 1:
        return mean, 0.0
    half = 1.96 * float(samples.std(ddof=1)) / np.sqrt(trials)
    return mean, float(half)


def events_to_csv(outcome: SimOutcome, path) -> None:
    """Trace dump: node, event_type, t_start, t_end."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "event_type", "t_start", "t_end"])
        for ev in outcome.events:
            writer.writerow([ev.node, ev.event_type, repr(ev.t_start), repr(ev.t_end)])
