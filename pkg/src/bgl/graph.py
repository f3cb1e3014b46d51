"""Bipartite label graphs linking fine-grained classes to coarse classes.

A :class:`LabelGraph` stores, for each of ``k`` fine classes and each of
``m`` coarse types, the single coarse class of that type the fine class is
connected to.  Indices are 0-based in memory and 1-based in the text file
format handled by :func:`load_graph` / :func:`save_graph`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyType,
    MultipleParents,
    OutOfRangeParent,
    ParseError,
    SizeMismatch,
    TypeIndexOutOfRange,
)

__all__ = [
    "LabelGraph",
    "CoarseGroup",
    "validate",
    "groups",
    "load_graph",
    "save_graph",
    "read_graph",
    "write_graph",
]


class CoarseGroup(NamedTuple):
    type_index: int
    coarse_index: int
    members: tuple


@dataclass(frozen=True, eq=False)
class LabelGraph:
    """Star of ``m`` bipartite graphs over ``k`` fine classes.

    Parameters
    ----------
    k : int
        Number of fine classes.
    coarse_sizes : sequence of int
        ``coarse_sizes[j]`` is the number of coarse classes of type ``j``.
    parent : array_like of int, shape (k, m)
        0-based coarse class of type ``j`` connected to fine class ``i``.
        May be omitted (or have zero columns) when there are no coarse types.
    """

    k: int
    coarse_sizes: tuple = ()
    parent: np.ndarray = field(default=None)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.coarse_sizes)
        object.__setattr__(self, "coarse_sizes", sizes)
        object.__setattr__(self, "k", int(self.k))
        parent = self.parent
        if parent is None:
            parent = np.zeros((self.k, len(sizes)), dtype=np.int64)
        parent = np.array(parent, dtype=np.int64, copy=True)
        if parent.ndim == 1 and len(sizes) == 1 and parent.shape[0] == self.k:
            parent = parent[:, None]
        if parent.size == 0 and parent.ndim < 2:
            parent = parent.reshape(max(self.k, 0), 0)
        parent.setflags(write=False)
        object.__setattr__(self, "parent", parent)
        validate(self)

    @property
    def m(self) -> int:
        return len(self.coarse_sizes)

    @classmethod
    def from_association(cls, matrices: Sequence) -> "LabelGraph":
        """Build from binary association matrices ``G_j`` of shape (k, k_j).

        Every row of every matrix must contain exactly one 1.
        """
        matrices = [np.asarray(g) for g in matrices]
        if not matrices:
            raise SizeMismatch("need at least one matrix to infer k; use LabelGraph(k) for m=0")
        k = matrices[0].shape[0]
        cols = []
        for j, g in enumerate(matrices):
            if g.ndim != 2 or g.shape[0] != k:
                raise SizeMismatch(f"association matrix {j} has shape {g.shape}, expected ({k}, k_j)")
            if not np.isin(g, (0, 1)).all():
                raise SizeMismatch(f"association matrix {j} is not binary")
            counts = g.sum(axis=1)
            bad = np.flatnonzero(counts != 1)
            if bad.size:
                raise MultipleParents(
                    f"type {j}: fine class {bad[0]} has {counts[bad[0]]} parents, expected exactly 1"
                )
            cols.append(np.argmax(g, axis=1))
        parent = np.stack(cols, axis=1)
        return cls(k, [g.shape[1] for g in matrices], parent)

    def association(self, j: int) -> np.ndarray:
        """Dense binary association matrix of type ``j``, shape (k, k_j)."""
        _check_type_index(self, j)
        g = np.zeros((self.k, self.coarse_sizes[j]), dtype=np.float64)
        g[np.arange(self.k), self.parent[:, j]] = 1.0
        return g

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start of each type's block in the concatenated coarse-score vector."""
        return np.concatenate([[0], np.cumsum(self.coarse_sizes)]).astype(np.int64)

    @cached_property
    def flat_parent(self) -> np.ndarray:
        """``parent`` shifted into the concatenated coarse index space."""
        out = self.parent + self.offsets[:-1]
        out.setflags(write=False)
        return out

    @cached_property
    def flat_parent_ravel(self) -> np.ndarray:
        out = np.ascontiguousarray(self.flat_parent).ravel()
        out.setflags(write=False)
        return out

    @cached_property
    def flat_parent_t(self) -> np.ndarray:
        """``flat_parent`` transposed to a contiguous (m, k) array."""
        out = np.ascontiguousarray(self.flat_parent.T)
        out.setflags(write=False)
        return out

    @cached_property
    def flat_parent_t_ravel(self) -> np.ndarray:
        """:attr:`flat_parent_t` flattened; entry ``j * k + i`` belongs to (i, j)."""
        out = self.flat_parent_t.ravel()
        out.setflags(write=False)
        return out

    @property
    def total_coarse(self) -> int:
        return int(self.offsets[-1])

    def group_sizes(self, j: int) -> np.ndarray:
        _check_type_index(self, j)
        return np.bincount(self.parent[:, j], minlength=self.coarse_sizes[j])

    def __eq__(self, other):
        if not isinstance(other, LabelGraph):
            return NotImplemented
        return (
            self.k == other.k
            and self.coarse_sizes == other.coarse_sizes
            and np.array_equal(self.parent, other.parent)
        )

    def __hash__(self):
        return hash((self.k, self.coarse_sizes, self.parent.tobytes()))

    def __repr__(self):
        return f"LabelGraph(k={self.k}, coarse_sizes={list(self.coarse_sizes)})"


def validate(graph: LabelGraph) -> None:
    """Raise if ``graph`` breaks any structural invariant, else return None."""
    k, sizes, parent = graph.k, graph.coarse_sizes, graph.parent
    if k < 1:
        raise SizeMismatch(f"k must be positive, got {k}")
    for j, s in enumerate(sizes):
        if s < 1:
            raise EmptyType(f"coarse type {j} has k_j={s}; every type needs at least one class")
    if parent.shape != (k, len(sizes)):
        raise SizeMismatch(f"parent table has shape {parent.shape}, expected ({k}, {len(sizes)})")
    for j, s in enumerate(sizes):
        col = parent[:, j]
        bad = np.flatnonzero((col < 0) | (col >= s))
        if bad.size:
            i = bad[0]
            raise OutOfRangeParent(
                f"fine class {i} has parent {col[i]} in type {j}, valid range is 0..{s - 1}"
            )


def _check_type_index(graph, j):
    if not 0 <= j < graph.m:
        raise TypeIndexOutOfRange(f"type index {j} out of range for m={graph.m}")


def groups(graph: LabelGraph, j: int) -> list:
    """Partition of the fine classes by their parent in type ``j``.

    One :class:`CoarseGroup` per coarse class, in coarse-index order, each
    with sorted members.  Coarse classes without members give empty groups.
    """
    _check_type_index(graph, j)
    col = graph.parent[:, j]
    order = np.argsort(col, kind="stable")
    bounds = np.searchsorted(col[order], np.arange(graph.coarse_sizes[j] + 1))
    return [
        CoarseGroup(j, c, tuple(int(i) for i in order[bounds[c]:bounds[c + 1]]))
        for c in range(graph.coarse_sizes[j])
    ]


def _parse_int(tok, lineno, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected integer for {what}, got {tok!r}", lineno) from None


def _parse_kv(tok, key, lineno):
    name, sep, value = tok.partition("=")
    if not sep or name.strip() != key:
        raise ParseError(f"expected '{key}=<int>', got {tok!r}", lineno)
    return _parse_int(value, lineno, key)


def load_graph(text: str) -> LabelGraph:
    """Parse the line-oriented graph format (1-based indices)."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line))
    if not lines:
        raise ParseError("empty graph file", 1)

    lineno, header = lines[0]
    toks = header.split()
    if len(toks) != 2:
        raise ParseError(f"header must be 'k=<int> m=<int>', got {header!r}", lineno)
    k = _parse_kv(toks[0], "k", lineno)
    m = _parse_kv(toks[1], "m", lineno)
    if k < 1 or m < 0:
        raise ParseError(f"need k >= 1 and m >= 0, got k={k} m={m}", lineno)

    body = lines[1:]
    sizes = []
    if m > 0:
        if not body:
            raise ParseError("missing 'sizes=' line", lineno + 1)
        lineno, line = body[0]
        name, sep, value = line.partition("=")
        if not sep or name.strip() != "sizes":
            raise ParseError(f"expected 'sizes=<k_1>,...,<k_m>', got {line!r}", lineno)
        sizes = [_parse_int(t, lineno, "coarse size") for t in value.replace(",", " ").split()]
        if len(sizes) != m:
            raise ParseError(f"'sizes' lists {len(sizes)} values, header says m={m}", lineno)
        body = body[1:]

    if len(body) != k:
        at = body[k][0] if len(body) > k else (body[-1][0] + 1 if body else lineno + 1)
        raise ParseError(f"expected {k} fine-class rows, found {len(body)}", at)

    parent = np.zeros((k, m), dtype=np.int64)
    seen = np.zeros(k, dtype=bool)
    for lineno, line in body:
        toks = line.split()
        if len(toks) != m + 1:
            raise ParseError(f"expected {m + 1} integers, got {len(toks)}", lineno)
        vals = [_parse_int(t, lineno, "index") for t in toks]
        i = vals[0]
        if not 1 <= i <= k:
            raise ParseError(f"fine index {i} outside 1..{k}", lineno)
        if seen[i - 1]:
            raise ParseError(f"fine index {i} appears twice", lineno)
        seen[i - 1] = True
        for j, c in enumerate(vals[1:]):
            if m and not 1 <= c <= sizes[j]:
                raise OutOfRangeParent(
                    f"line {lineno}: parent {c} of type {j + 1} outside 1..{sizes[j]}"
                )
        parent[i - 1] = np.asarray(vals[1:], dtype=np.int64) - 1
    return LabelGraph(k, sizes, parent)


def save_graph(graph: LabelGraph) -> str:
    out = [f"k={graph.k} m={graph.m}"]
    if graph.m:
        out.append("sizes=" + ",".join(str(s) for s in graph.coarse_sizes))
    for i in range(graph.k):
        out.append(" ".join([str(i + 1)] + [str(int(c) + 1) for c in graph.parent[i]]))
    return "\n".join(out) + "\n"


def read_graph(path) -> LabelGraph:
    with open(path) as fh:
        return load_graph(fh.read())


def write_graph(graph: LabelGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(save_graph(graph))
