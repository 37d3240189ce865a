"""Deterministic single-round gradient aggregation for every scheme.

Stragglers here are simply excluded from each parent's combination; timing
lives in the latency module.  All schemes that claim the full gradient must
agree with each other to floating-point accuracy, whatever the admissible
straggler pattern; that equivalence is the core correctness property.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .allocation import Assignment, WeightedSlice, comp_alloc, uniform_partition
from .codes import EncodingMatrix, decode_row
from .topology import MASTER, NodeId, RegularTree, StragglerPattern

__all__ = [
    "GradientOracle",
    "UnrecoverableError",
    "cr_execute",
    "gc_execute",
    "umw_execute",
    "rar_execute",
    "sgd_execute",
]

# Maps (model, weighted slices) to the weighted sum of per-point gradients.
# Must be additive over disjoint slice lists and homogeneous in the weights.
GradientOracle = Callable[[np.ndarray, Sequence[WeightedSlice]], np.ndarray]


class UnrecoverableError(RuntimeError):
    def __init__(self, parent: NodeId, missing: int, tolerance: int):
        self.parent = parent
        super().__init__(
            f"parent {parent} lost {missing} children but tolerates only {tolerance}"
        )


def _combine(
    tree: RegularTree,
    B: EncodingMatrix,
    parent: NodeId,
    pattern: StragglerPattern,
    messages: dict[NodeId, np.ndarray],
    s: int,
) -> np.ndarray:
    kids = tree.children(parent)
    straggling = pattern.per_parent(parent)
    survivors = [pos for pos, c in enumerate(kids) if c not in straggling]
    need = tree.n - s
    if len(survivors) < need:
        raise UnrecoverableError(parent, tree.n - len(survivors), s)
    survivors = survivors[:need]  # surplus survivors: keep lowest child indices
    row = decode_row(B, survivors)
    out = np.zeros_like(messages[kids[survivors[0]]])
    for pos in survivors:
        out += row.coefficients[pos] * messages[kids[pos]]
    return out


def cr_execute(
    tree: RegularTree,
    assignment: Assignment,
    B: EncodingMatrix,
    pattern: StragglerPattern,
    oracle: GradientOracle,
    theta: np.ndarray,
) -> np.ndarray:
    """One coded aggregation round over the tree; returns the recovered gradient.

    Leaves emit their local coded gradient; each internal node decodes the
    surviving children's messages (first n-s in child-index order when more
    survive) and adds its own local coded gradient; the master only decodes.
    """
    pattern.validate(tree, assignment.s)
    s = assignment.s
    messages: dict[NodeId, np.ndarray] = {}
    for layer in range(tree.L, 0, -1):
        for node in tree.layer_nodes(layer):
            m = oracle(theta, assignment.local[node])
            if not tree.is_leaf(node):
                m = m + _combine(tree, B, node, pattern, messages, s)
            messages[node] = m
    return _combine(tree, B, MASTER, pattern, messages, s)


def _unit_partition(N: int, d: int) -> list[tuple[WeightedSlice, ...]]:
    if d % N != 0:
        raise ValueError(f"{d} points do not split evenly over {N} workers")
    return uniform_partition([WeightedSlice(0, d, 1.0)], N)


def gc_execute(
    N: int,
    S: int,
    B: EncodingMatrix,
    stragglers,
    oracle: GradientOracle,
    theta: np.ndarray,
    d: int,
) -> np.ndarray:
    """Single-group coded round: master combines any N-S workers' messages."""
    if B.n != N or B.s != S:
        raise ValueError(f"encoding matrix is for (n={B.n}, s={B.s}), not (N={N}, S={S})")
    straggling = set(int(i) for i in stragglers)
    if len(straggling) > S:
        raise UnrecoverableError(MASTER, len(straggling), S)
    datasets = comp_alloc([WeightedSlice(0, d, 1.0)], B)
    survivors = [i for i in range(N) if i not in straggling][: N - S]
    row = decode_row(B, survivors)
    out = row.coefficients[survivors[0]] * oracle(theta, datasets[survivors[0]])
    for i in survivors[1:]:
        out += row.coefficients[i] * oracle(theta, datasets[i])
    return out


def umw_execute(N: int, oracle: GradientOracle, theta: np.ndarray, d: int) -> np.ndarray:
    """Uncoded master-worker: plain sum of all N partial gradients."""
    parts = _unit_partition(N, d)
    out = oracle(theta, parts[0])
    for part in parts[1:]:
        out += oracle(theta, part)
    return out


def rar_execute(
    N: int, oracle: GradientOracle, theta: np.ndarray, d: int
) -> list[np.ndarray]:
    """Ring allreduce at the data level: reduce-scatter then allgather.

    Returns all N workers' copies of the aggregated gradient, each built by
    circulating vector segments around the ring for N-1 rounds per phase.
    """
    parts = _unit_partition(N, d)
    buffers = [oracle(theta, part) for part in parts]
    p = buffers[0].shape[0]
    bounds = [len(seg) for seg in np.array_split(np.arange(p), N)]
    offsets = np.concatenate([[0], np.cumsum(bounds)])
    seg = [slice(int(offsets[k]), int(offsets[k + 1])) for k in range(N)]

    for rnd in range(N - 1):  # reduce-scatter: worker i forwards segment i-rnd
        updates = []
        for i in range(N):
            k = (i - rnd) % N
            updates.append(((i + 1) % N, k, buffers[i][seg[k]].copy()))
        for receiver, k, payload in updates:
            buffers[receiver][seg[k]] += payload
    for rnd in range(N - 1):  # allgather: circulate each fully reduced segment
        updates = []
        for i in range(N):
            k = (i + 1 - rnd) % N
            updates.append(((i + 1) % N, k, buffers[i][seg[k]].copy()))
        for receiver, k, payload in updates:
            buffers[receiver][seg[k]] = payload
    return buffers


def sgd_execute(
    N: int,
    S: int,
    stragglers,
    oracle: GradientOracle,
    theta: np.ndarray,
    d: int,
) -> np.ndarray:
    """Partial aggregation: sum over the first N-S non-straggling workers only.

    Intentionally returns a partial gradient; the model update absorbs the
    missing terms as stochastic error.
    """
    straggling = set(int(i) for i in stragglers)
    if len(straggling) > S:
        raise UnrecoverableError(MASTER, len(straggling), S)
    parts = _unit_partition(N, d)
    survivors = [i for i in range(N) if i not in straggling][: N - S]
    out = oracle(theta, parts[survivors[0]])
    for i in survivors[1:]:
        out += oracle(theta, parts[i])
    return out
