"""Rooted phylogenies with branch lengths, parsed from Newick text.

Supplies the time quantities the covariance formulas consume: per-pair
shared time (root to most recent common ancestor), divergence time
(path length between two tips through their MRCA), and tree depth.

Dialect: plain Newick with labels made of letters, digits, ``_`` and
``.``; branch lengths are required on every non-root edge.  Quoted
labels and ``[...]`` comments are rejected.  A branch length on the
root is parsed and kept for round-tripping but ignored by all time
queries (the time origin sits at the root).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

__all__ = [
    "NewickError",
    "NotUltrametricError",
    "PairTimes",
    "PhyloTree",
    "parse_newick",
    "serialize_newick",
    "validate_ultrametric",
    "normalize_tip_depths",
]

_LABEL_CHARS = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_."
)
_NUMBER_CHARS = frozenset("0123456789.eE+-")


class NewickError(ValueError):
    """Malformed Newick input; ``position`` is the 0-based offset of the fault."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class NotUltrametricError(ValueError):
    """Tip depths disagree beyond the requested tolerance."""


class PairTimes(NamedTuple):
    """Time quantities for a pair of tips.

    shared_time: root-to-MRCA distance (t_a).
    divergence_time: MRCA-to-i plus MRCA-to-j path length (d_ij).
    depth: maximum root-to-tip distance of the tree (the common depth T
    on an ultrametric tree).
    """

    shared_time: float
    divergence_time: float
    depth: float


@dataclass
class _Node:
    label: str | None = None
    parent: int | None = None
    length: float | None = None  # branch to parent; None only for the root
    children: list[int] = field(default_factory=list)

    @property
    def is_tip(self) -> bool:
        return not self.children


class PhyloTree:
    """A rooted tree with branch lengths, immutable after construction.

    Tips are addressed by their (unique) labels.  All queries are
    read-only, so instances are safe to share across threads.
    """

    def __init__(self, nodes: list[_Node], root: int, root_length: float | None = None):
        self._nodes = nodes
        self._root = root
        self._root_length = root_length
        self._tip_ids = [i for i, nd in enumerate(nodes) if nd.is_tip]
        self._tip_index = {}
        for k, i in enumerate(self._tip_ids):
            label = nodes[i].label
            if not label:
                raise ValueError("every tip must carry a non-empty label")
            if label in self._tip_index:
                raise ValueError(f"duplicate tip label {label!r}")
            self._tip_index[label] = k
        self._validate()

    def _validate(self) -> None:
        for i, nd in enumerate(self._nodes):
            if i == self._root:
                if nd.parent is not None:
                    raise ValueError("root must not have a parent")
                continue
            if nd.parent is None:
                raise ValueError(f"non-root node {i} has no parent")
            if nd.length is None:
                raise ValueError(f"missing branch length on node {i}")
            if not np.isfinite(nd.length) or nd.length < 0:
                raise ValueError(f"branch length must be finite and >= 0, got {nd.length}")

    # ---------------------------------------------------------------- basics

    @property
    def n_tips(self) -> int:
        return len(self._tip_ids)

    @property
    def tip_labels(self) -> list[str]:
        """Tip labels in parse order."""
        return [self._nodes[i].label for i in self._tip_ids]

    @cached_property
    def _root_distance(self) -> np.ndarray:
        """Root-to-node distance for every node (root branch ignored)."""
        dist = np.zeros(len(self._nodes))
        stack = [self._root]
        while stack:
            i = stack.pop()
            for c in self._nodes[i].children:
                dist[c] = dist[i] + self._nodes[c].length
                stack.append(c)
        return dist

    @cached_property
    def tip_depths(self) -> np.ndarray:
        """Root-to-tip distance per tip, in tip_labels order."""
        return self._root_distance[self._tip_ids]

    @property
    def depth(self) -> float:
        """Maximum root-to-tip distance."""
        return float(self.tip_depths.max())

    @cached_property
    def min_branch_length(self) -> float:
        lengths = [nd.length for i, nd in enumerate(self._nodes) if i != self._root]
        return float(min(lengths)) if lengths else 0.0

    # ----------------------------------------------------------- pair times

    @cached_property
    def shared_time_matrix(self) -> np.ndarray:
        """n x n matrix of root-to-MRCA times t_a; diagonal is the tip depth."""
        n = self.n_tips
        ta = np.zeros((n, n))
        np.fill_diagonal(ta, self.tip_depths)
        # descendant tip sets bottom-up; cross-child pairs coalesce here
        tipsets: dict[int, list[int]] = {i: [k] for k, i in enumerate(self._tip_ids)}
        for i in self._postorder():
            nd = self._nodes[i]
            if nd.is_tip:
                continue
            groups = [tipsets.pop(c) for c in nd.children]
            t = self._root_distance[i]
            for a in range(len(groups)):
                for b in range(a + 1, len(groups)):
                    for u in groups[a]:
                        for v in groups[b]:
                            ta[u, v] = ta[v, u] = t
            tipsets[i] = [u for g in groups for u in g]
        return ta

    @cached_property
    def divergence_matrix(self) -> np.ndarray:
        """n x n matrix of total divergence path lengths d_ij; zero diagonal."""
        depths = self.tip_depths
        d = depths[:, None] + depths[None, :] - 2.0 * self.shared_time_matrix
        np.fill_diagonal(d, 0.0)
        return d

    @cached_property
    def pair_time_classes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct (t_a, d) pair values and the n x n index into them.

        Pairs coalescing at the same node share their times, so there are
        O(n) classes instead of n^2 entries; covariance kernels are
        evaluated once per class and scattered.
        """
        ta = self.shared_time_matrix
        d = self.divergence_matrix
        pairs = np.column_stack([ta.ravel(), d.ravel()])
        unique, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return unique[:, 0], unique[:, 1], inverse.reshape(ta.shape)

    def _postorder(self) -> list[int]:
        order: list[int] = []
        stack = [self._root]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(self._nodes[i].children)
        order.reverse()
        return order

    def tip_number(self, label: str) -> int:
        try:
            return self._tip_index[label]
        except KeyError:
            raise KeyError(f"unknown tip label {label!r}") from None

    def pair_times(self, i: str, j: str) -> PairTimes:
        """Shared and divergence times for the tip pair (i, j); symmetric."""
        a = self.tip_number(i)
        b = self.tip_number(j)
        return PairTimes(
            shared_time=float(self.shared_time_matrix[a, b]),
            divergence_time=float(self.divergence_matrix[a, b]),
            depth=self.depth,
        )

    # -------------------------------------------------------- serialization

    def to_newick(self) -> str:
        def render(i: int) -> str:
            nd = self._nodes[i]
            if nd.is_tip:
                body = nd.label
            else:
                body = "(" + ",".join(render(c) for c in nd.children) + ")"
                if nd.label:
                    body += nd.label
            if i == self._root:
                if self._root_length is not None:
                    body += f":{_format_length(self._root_length)}"
            else:
                body += f":{_format_length(nd.length)}"
            return body

        return render(self._root) + ";"

    def __repr__(self) -> str:
        return f"PhyloTree(n_tips={self.n_tips}, depth={self.depth:g})"


def _format_length(value: float) -> str:
    # exact round-trip, without a trailing ".0" on integral lengths
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


# ---------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.nodes: list[_Node] = []

    def error(self, message: str) -> NewickError:
        return NewickError(message, self.pos)

    def peek(self) -> str:
        self.skip_ws()
        if self.pos >= len(self.text):
            raise NewickError("unexpected end of input", len(self.text))
        return self.text[self.pos]

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def parse(self) -> PhyloTree:
        self.skip_ws()
        if not self.text.strip():
            raise NewickError("empty input", 0)
        for ch, what in (("[", "bracket comments"), ("'", "quoted labels"), ('"', "quoted labels")):
            if ch in self.text:
                raise NewickError(f"{what} are not supported", self.text.index(ch))
        root, root_length = self.element(at_root=True)
        if self.peek() != ";":
            raise self.error("expected ';'")
        self.pos += 1
        self.skip_ws()
        if self.pos != len(self.text):
            raise self.error("trailing content after ';'")
        return PhyloTree(self.nodes, root, root_length)

    def element(self, at_root: bool) -> tuple[int, float | None]:
        """Parse one clade or leaf; returns (node id, optional branch length)."""
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            node = _Node()
            self.nodes.append(node)
            node_id = len(self.nodes) - 1
            while True:
                child, length = self.element(at_root=False)
                if length is None:
                    raise self.error("missing branch length")
                self.nodes[child].parent = node_id
                self.nodes[child].length = length
                node.children.append(child)
                ch = self.peek()
                if ch == ",":
                    self.pos += 1
                    continue
                if ch == ")":
                    self.pos += 1
                    break
                raise self.error("expected ',' or ')'")
            node.label = self.maybe_label()
        else:
            label = self.maybe_label()
            if label is None:
                raise self.error(f"unexpected character {ch!r}")
            self.nodes.append(_Node(label=label))
            node_id = len(self.nodes) - 1
        length = self.maybe_length()
        return node_id, length

    def maybe_label(self) -> str | None:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _LABEL_CHARS:
            self.pos += 1
        return self.text[start : self.pos] if self.pos > start else None

    def maybe_length(self) -> float | None:
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ":":
            return None
        self.pos += 1
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _NUMBER_CHARS:
            self.pos += 1
        token = self.text[start : self.pos]
        if not token:
            raise self.error("expected a branch length after ':'")
        try:
            value = float(token)
        except ValueError:
            self.pos = start
            raise self.error(f"invalid branch length {token!r}") from None
        if not np.isfinite(value):
            self.pos = start
            raise self.error(f"branch length must be finite, got {token!r}")
        if value < 0:
            self.pos = start
            raise self.error(f"branch length must be >= 0, got {token!r}")
        return value


def parse_newick(text: str) -> PhyloTree:
    """Parse a single Newick tree (terminating semicolon required)."""
    return _Parser(text).parse()


def serialize_newick(tree: PhyloTree) -> str:
    """Render a tree back to Newick; parse(serialize(t)) reproduces t."""
    return tree.to_newick()


def validate_ultrametric(tree: PhyloTree, rel_tol: float = 1e-6) -> float:
    """Check that all tip depths agree within rel_tol of their mean.

    Returns the mean depth T.  Raises NotUltrametricError naming the
    worst-offending tip and its relative deviation.
    """
    depths = tree.tip_depths
    mean = float(depths.mean())
    if mean == 0.0:
        if np.any(depths != 0.0):
            raise NotUltrametricError("tip depths differ but their mean is zero")
        return 0.0
    rel_dev = np.abs(depths - mean) / mean
    worst = int(np.argmax(rel_dev))
    if rel_dev[worst] > rel_tol:
        label = tree.tip_labels[worst]
        raise NotUltrametricError(
            f"tree is not ultrametric: tip {label!r} has depth {depths[worst]:g}, "
            f"mean depth is {mean:g} (relative deviation {rel_dev[worst]:.3g} "
            f"> rel_tol {rel_tol:g})"
        )
    return mean


def normalize_tip_depths(tree: PhyloTree) -> PhyloTree:
    """Stretch pendant branches so every tip depth equals the mean depth.

    Used by the CLI override for almost-ultrametric inputs.  Errors if a
    pendant branch would have to become negative.
    """
    mean = float(tree.tip_depths.mean())
    nodes = [
        _Node(label=nd.label, parent=nd.parent, length=nd.length, children=list(nd.children))
        for nd in tree._nodes
    ]
    for k, i in enumerate(tree._tip_ids):
        adjust = mean - float(tree.tip_depths[k])
        new_length = nodes[i].length + adjust
        if new_length < 0:
            raise ValueError(
                f"cannot normalize: pendant branch of tip {nodes[i].label!r} "
                f"would become negative ({new_length:g})"
            )
        nodes[i].length = new_length
    return PhyloTree(nodes, tree._root, tree._root_length)
