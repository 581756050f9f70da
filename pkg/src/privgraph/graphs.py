"""Graph container, structural-bias metrics, and message-passing operators.

The central type is :class:`LabeledGraph`: an undirected attributed graph
whose nodes carry a sensitive label and, optionally, a utility label.
Structural bias measures how strongly edges prefer same-label endpoints;
the two normalizations defined here ("theory_eq4" and "left_stochastic")
are the propagation operators used by the leakage analysis and by the
trainable encoder respectively.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

KIND_THEORY = "theory_eq4"
KIND_LEFT = "left_stochastic"
NORMALIZATION_KINDS = (KIND_THEORY, KIND_LEFT)


class GraphValidationError(ValueError):
    """A graph, label vector, or companion matrix failed validation."""


def _as_int_labels(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape != (n,):
        raise GraphValidationError(f"{name} must have length {n}, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise GraphValidationError(f"{name} must be integers")
        arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise GraphValidationError(f"{name} must be non-negative")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected attributed graph with sensitive and optional utility labels.

    The adjacency is CSR with unit weights, both directions of every
    undirected edge stored, no self-loops and no duplicate entries.
    Instances are immutable after construction and safe to share.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    sensitive_labels: np.ndarray
    utility_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency)
        adj.sum_duplicates()
        n, m = adj.shape
        if n != m:
            raise GraphValidationError(f"adjacency must be square, got {adj.shape}")
        if adj.nnz and adj.data.max() > 1:
            raise GraphValidationError("duplicate edges in adjacency")
        if np.any(adj.diagonal() != 0):
            raise GraphValidationError("self-loops are not allowed")
        if (adj != adj.T).nnz != 0:
            raise GraphValidationError("adjacency must be symmetric")
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != n:
            raise GraphValidationError(
                f"features must be a matrix with {n} rows, got shape {features.shape}"
            )
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", features)
        object.__setattr__(
            self, "sensitive_labels", _as_int_labels(self.sensitive_labels, n, "sensitive labels")
        )
        if self.utility_labels is not None:
            object.__setattr__(
                self, "utility_labels", _as_int_labels(self.utility_labels, n, "utility labels")
            )

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @property
    def n_sensitive_classes(self) -> int:
        return int(self.sensitive_labels.max()) + 1 if self.n else 0

    @property
    def n_utility_classes(self) -> int:
        if self.utility_labels is None:
            return 0
        return int(self.utility_labels.max()) + 1

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with src < dst."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return np.column_stack([coo.row, coo.col]).astype(np.int64)

    def equals(self, other: "LabeledGraph") -> bool:
        if self.n != other.n or (self.adjacency != other.adjacency).nnz != 0:
            return False
        if not np.array_equal(self.features, other.features):
            return False
        if not np.array_equal(self.sensitive_labels, other.sensitive_labels):
            return False
        if (self.utility_labels is None) != (other.utility_labels is None):
            return False
        if self.utility_labels is not None and not np.array_equal(
            self.utility_labels, other.utility_labels
        ):
            return False
        return True


@dataclass(frozen=True)
class NormalizedOperator:
    """Sparse propagation operator together with the degrees it was built from."""

    kind: str
    matrix: sp.csr_matrix
    degrees: np.ndarray


def _same_label_mass(matrix, labels: np.ndarray) -> np.ndarray:
    """Per node, the total (weight of) neighbors sharing the node's label."""
    same = np.zeros(labels.shape[0], dtype=np.float64)
    for c in np.unique(labels):
        mask = (labels == c).astype(np.float64)
        contrib = np.asarray(matrix @ mask).ravel()
        rows = labels == c
        same[rows] = contrib[rows]
    return same


def structural_bias(graph: LabeledGraph, labels, weights=None) -> float:
    """Average per-node normalized same-vs-different neighbor disparity.

    For each node v with at least one neighbor, the disparity is
    |same(v) - different(v)| / total(v) where the terms count neighbors
    (or sum their weights, when ``weights`` is given) by label agreement
    with v. Nodes without neighbors (zero weight mass) are excluded from
    the average. Diagonal weight entries are ignored: a node is not its
    own neighbor.
    """
    labels = _as_int_labels(labels, graph.n, "labels")
    if weights is None:
        mat = graph.adjacency
        total = graph.degrees.astype(np.float64)
    else:
        mat = np.array(weights, dtype=np.float64)
        if mat.shape != (graph.n, graph.n):
            raise GraphValidationError(
                f"weights must be {graph.n}x{graph.n}, got {mat.shape}"
            )
        if mat.min() < 0:
            raise GraphValidationError("weights must be non-negative")
        np.fill_diagonal(mat, 0.0)
        total = mat.sum(axis=1)
    active = total > 0
    if not active.any():
        raise GraphValidationError("bias undefined on edgeless graph")
    same = _same_label_mass(mat, labels)
    disparity = np.abs(2.0 * same[active] - total[active]) / total[active]
    return float(disparity.mean())


def intra_inter_counts(graph: LabeledGraph, labels) -> tuple[int, int]:
    """Counts of undirected edges joining equal-label vs unequal-label nodes."""
    labels = _as_int_labels(labels, graph.n, "labels")
    edges = graph.edge_list()
    if edges.size == 0:
        return 0, 0
    intra = int(np.count_nonzero(labels[edges[:, 0]] == labels[edges[:, 1]]))
    return intra, edges.shape[0] - intra


def normalize(graph: LabeledGraph, kind: str) -> NormalizedOperator:
    """Build the propagation operator of the requested kind.

    ``theory_eq4``: entry (u,u) = 1/|N_u| and (u,v) = 1/sqrt(|N_u||N_v|)
    for each edge, with |N_u| the neighbor count excluding self; isolated
    nodes get an identity row.

    ``left_stochastic``: D^-1 A; isolated nodes get a self-loop of weight 1
    so every row sums to one.
    """
    if kind not in NORMALIZATION_KINDS:
        raise ValueError(f"unknown normalization kind {kind!r}")
    if graph.n == 0:
        raise GraphValidationError("cannot normalize an empty graph")
    deg = graph.degrees.astype(np.float64)
    coo = graph.adjacency.tocoo()
    nodes = np.arange(graph.n)
    if kind == KIND_THEORY:
        diag = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 1.0)
        off = 1.0 / np.sqrt(deg[coo.row] * deg[coo.col])
    else:
        diag = np.where(deg > 0, 0.0, 1.0)
        off = 1.0 / deg[coo.row]
    rows = np.concatenate([nodes, coo.row])
    cols = np.concatenate([nodes, coo.col])
    data = np.concatenate([diag, off])
    keep = data != 0
    matrix = sp.csr_matrix((data[keep], (rows[keep], cols[keep])), shape=(graph.n, graph.n))
    return NormalizedOperator(kind=kind, matrix=matrix, degrees=graph.degrees)


def propagate(op: NormalizedOperator, features) -> np.ndarray:
    """One round of message passing: returns op.matrix @ features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != op.matrix.shape[1]:
        raise ValueError(
            f"features must be 2-D with {op.matrix.shape[1]} rows, got shape {x.shape}"
        )
    return np.asarray(op.matrix @ x)


def sample_non_edges(graph: LabeledGraph, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``count`` distinct unordered non-adjacent pairs (u < v).

    Rejection sampling against the edge set; raises if the graph is too
    dense to supply the requested number of non-edges.
    """
    n = graph.n
    total_pairs = n * (n - 1) // 2
    available = total_pairs - graph.edge_count
    if count > available:
        raise GraphValidationError(
            f"requested {count} non-edges but only {available} exist"
        )
    edges = graph.edge_list()
    edge_keys = np.sort(edges[:, 0].astype(np.int64) * n + edges[:, 1]) if edges.size else np.empty(0, dtype=np.int64)
    chosen: list[np.ndarray] = []
    seen = np.empty(0, dtype=np.int64)
    remaining = count
    while remaining > 0:
        draw = rng.integers(0, n, size=(max(2 * remaining, 64), 2))
        u = draw.min(axis=1)
        v = draw.max(axis=1)
        keys = u.astype(np.int64) * n + v
        ok = u != v
        if edge_keys.size:
            idx = np.searchsorted(edge_keys, keys)
            idx = np.clip(idx, 0, edge_keys.size - 1)
            ok &= edge_keys[idx] != keys
        keys = keys[ok]
        # dedupe in draw order so the batch behaves like sequential rejection
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        if seen.size:
            keys = keys[~np.isin(keys, seen)]
        take = keys[:remaining]
        if take.size:
            chosen.append(take)
            seen = np.concatenate([seen, take])
            remaining -= take.size
    keys = np.concatenate(chosen)
    return np.column_stack([keys // n, keys % n]).astype(np.int64)
