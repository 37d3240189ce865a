"""Regular aggregation trees and straggler-pattern enumeration.

A tree with fan-out ``n`` and ``L`` worker layers has a master at the root
and ``N = n + n^2 + ... + n^L`` workers.  Nodes are addressed as
``(layer, index)`` with the master at ``(0, 1)`` and 1-based indices within
each layer, so parent/child relations are pure arithmetic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterator, Mapping

import numpy as np

__all__ = [
    "NodeId",
    "MASTER",
    "RegularTree",
    "StragglerPattern",
    "build_tree",
    "enumerate_patterns",
]


@dataclass(frozen=True, order=True)
class NodeId:
    """Address of a tree node: layer 0 is the master, workers sit in 1..L."""

    layer: int
    index: int

    def __str__(self) -> str:
        return f"{self.layer}.{self.index}"


MASTER = NodeId(0, 1)


@dataclass(frozen=True)
class RegularTree:
    """Tree with `n` children per parent and `L` worker layers below the master."""

    n: int
    L: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"fan-out must be >= 1, got n={self.n}")
        if self.L < 1:
            raise ValueError(f"layer count must be >= 1, got L={self.L}")

    @property
    def num_workers(self) -> int:
        """Total worker count N = n + n^2 + ... + n^L."""
        return sum(self.n**l for l in range(1, self.L + 1))

    def layer_size(self, layer: int) -> int:
        if not 0 <= layer <= self.L:
            raise ValueError(f"layer {layer} outside [0, {self.L}]")
        return 1 if layer == 0 else self.n**layer

    def contains(self, node: NodeId) -> bool:
        return 0 <= node.layer <= self.L and 1 <= node.index <= self.layer_size(node.layer)

    def _check(self, node: NodeId) -> None:
        if not self.contains(node):
            raise ValueError(f"node {node} not in ({self.n},{self.L})-regular tree")

    def is_leaf(self, node: NodeId) -> bool:
        self._check(node)
        return node.layer == self.L

    def children(self, node: NodeId) -> tuple[NodeId, ...]:
        """Children of `node`, in index order; empty for leaves."""
        self._check(node)
        if node.layer == self.L:
            return ()
        base = self.n * (node.index - 1)
        return tuple(NodeId(node.layer + 1, base + j) for j in range(1, self.n + 1))

    def parent(self, node: NodeId) -> NodeId:
        self._check(node)
        if node == MASTER:
            raise ValueError("master has no parent")
        return NodeId(node.layer - 1, (node.index - 1) // self.n + 1)

    def child_position(self, node: NodeId) -> int:
        """0-based position of a worker among its siblings."""
        self._check(node)
        if node == MASTER:
            raise ValueError("master has no siblings")
        return (node.index - 1) % self.n

    def layer_nodes(self, layer: int) -> tuple[NodeId, ...]:
        return tuple(NodeId(layer, i) for i in range(1, self.layer_size(layer) + 1))

    def workers(self) -> Iterator[NodeId]:
        """All workers in layer-major order (layer 1 first)."""
        for layer in range(1, self.L + 1):
            yield from self.layer_nodes(layer)

    def parents(self) -> Iterator[NodeId]:
        """Every node with children: the master plus layers 1..L-1."""
        yield MASTER
        for layer in range(1, self.L):
            yield from self.layer_nodes(layer)


@dataclass(frozen=True)
class StragglerPattern:
    """Per-parent choice of straggling children (at most `s` under each parent)."""

    stragglers: Mapping[NodeId, frozenset[NodeId]]

    def per_parent(self, parent: NodeId) -> frozenset[NodeId]:
        return self.stragglers.get(parent, frozenset())

    def validate(self, tree: RegularTree, s: int) -> None:
        for parent, kids in self.stragglers.items():
            allowed = set(tree.children(parent))
            bad = set(kids) - allowed
            if bad:
                raise ValueError(f"{sorted(bad, key=str)} are not children of {parent}")
            if len(kids) > s:
                raise ValueError(
                    f"parent {parent} has {len(kids)} stragglers, tolerance is {s}"
                )


def build_tree(n: int, L: int) -> RegularTree:
    """Construct an (n, L)-regular tree; rejects n = 0 or L = 0."""
    return RegularTree(n=n, L=L)


def enumerate_patterns(
    tree: RegularTree, s: int, cap: int, seed: int = 0
) -> list[StragglerPattern]:
    """All per-parent straggler patterns with at most `s` stragglers per parent.

    When the full count exceeds `cap`, returns a seeded uniform sample of
    `cap` patterns instead, always containing the all-empty pattern and the
    all-maximal one (lowest-indexed `s` children straggling at every parent).
    """
    if not 0 <= s < tree.n:
        raise ValueError(f"straggler tolerance must satisfy 0 <= s < n, got s={s}")
    parents = list(tree.parents())
    # Per-parent choices as 0-based sibling-position tuples, shared by all parents.
    position_choices: list[tuple[int, ...]] = []
    for size in range(s + 1):
        position_choices.extend(itertools.combinations(range(tree.n), size))
    per_parent = sum(comb(tree.n, size) for size in range(s + 1))
    total = per_parent ** len(parents)

    def make(choice_ids: tuple[int, ...]) -> StragglerPattern:
        mapping = {}
        for parent, cid in zip(parents, choice_ids):
            kids = tree.children(parent)
            positions = position_choices[cid]
            if positions:
                mapping[parent] = frozenset(kids[p] for p in positions)
        return StragglerPattern(mapping)

    if total <= cap:
        return [make(ids) for ids in itertools.product(range(per_parent), repeat=len(parents))]

    rng = np.random.default_rng(seed)
    empty = make((0,) * len(parents))
    maximal_id = position_choices.index(tuple(range(s)))
    maximal = make((maximal_id,) * len(parents))
    out = [empty, maximal][:cap]
    while len(out) < cap:
        ids = tuple(int(c) for c in rng.integers(0, per_parent, size=len(parents)))
        out.append(make(ids))
    return out
