"""Attributed graph data model, file I/O, splits and structural statistics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, ParseError, ShapeError, StateError

log = logging.getLogger(__name__)

ADD = "add"
REMOVE = "remove"


@dataclass(frozen=True)
class EdgeFlip:
    u: int
    v: int
    action: str

    def __post_init__(self):
        if self.u == self.v:
            raise StateError(f"self-pair ({self.u},{self.v}) cannot be flipped")
        if self.action not in (ADD, REMOVE):
            raise ValueError(f"unknown action {self.action!r}")

    @property
    def sign(self) -> int:
        """+1 for an addition, -1 for a removal."""
        return 1 if self.action == ADD else -1

    def inverse(self) -> "EdgeFlip":
        return EdgeFlip(self.u, self.v, REMOVE if self.action == ADD else ADD)


@dataclass(frozen=True)
class AttributedGraph:
    """Undirected simple graph with a binary feature matrix.

    ``adjacency`` is a symmetric CSR matrix with unit entries and an empty
    diagonal. Instances are treated as immutable; :func:`apply_flip` returns
    a new graph. ``n_perturbations`` counts flips applied since loading.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    node_ids: Optional[tuple] = None
    n_perturbations: int = 0

    def __post_init__(self):
        a = self.adjacency
        if a.shape[0] != a.shape[1]:
            raise ShapeError(f"adjacency must be square, got {a.shape}")
        if self.features.shape[0] != a.shape[0]:
            raise ShapeError(
                f"feature rows ({self.features.shape[0]}) != node count ({a.shape[0]})"
            )

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def has_edge(self, u: int, v: int) -> bool:
        row = self.adjacency.indices[self.adjacency.indptr[u] : self.adjacency.indptr[u + 1]]
        return bool(np.any(row == v))

    def neighbors(self, v: int) -> np.ndarray:
        return self.adjacency.indices[self.adjacency.indptr[v] : self.adjacency.indptr[v + 1]]

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray()

    def flip_for(self, u: int, v: int) -> EdgeFlip:
        """The flip that toggles pair (u, v) in this graph."""
        return EdgeFlip(u, v, REMOVE if self.has_edge(u, v) else ADD)

    def edges(self) -> np.ndarray:
        """Edge list as an (m, 2) array with u < v, sorted."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    def validate(self):
        a = self.adjacency
        if (a != a.T).nnz:
            raise DataError("adjacency is not symmetric")
        if a.diagonal().any():
            raise DataError("adjacency has self-loops")
        if a.nnz and not np.all(a.data == 1):
            raise DataError("adjacency entries must be 0/1")
        if not np.isin(self.features, (0, 1)).all():
            raise DataError("features must be 0/1")


@dataclass(frozen=True)
class LabelSet:
    """Per-node target labels (categorical) and private labels (binary).

    Unknown labels are stored as -1 and excluded by ``known_mask``.
    """

    target: np.ndarray
    private: np.ndarray
    known_mask: np.ndarray = None

    def __post_init__(self):
        if self.known_mask is None:
            object.__setattr__(self, "known_mask", (self.target >= 0) & (self.private >= 0))
        known_private = self.private[self.private >= 0]
        if not np.isin(known_private, (0, 1)).all():
            raise DataError("private labels must be binary")

    @property
    def n_classes(self) -> int:
        return int(self.target.max()) + 1

    def for_task(self, which: str) -> np.ndarray:
        if which == "target":
            return self.target
        if which == "private":
            return self.private
        raise ConfigError(f"unknown task {which!r}; expected 'target' or 'private'")


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int = 0

    def __post_init__(self):
        parts = [set(map(int, p)) for p in (self.train, self.validation, self.test)]
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ConfigError("split parts overlap")


def from_edges(n_nodes: int, edges, features=None, node_ids=None) -> AttributedGraph:
    """Build a graph from an iterable of undirected (u, v) pairs."""
    edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    edges = edges.reshape(-1, 2)
    if features is None:
        features = np.zeros((n_nodes, 0), dtype=np.uint8)
    if len(edges):
        if (edges < 0).any() or (edges >= n_nodes).any():
            raise DataError("edge endpoint out of range")
        if (edges[:, 0] == edges[:, 1]).any():
            raise DataError("self-loops are not allowed")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_nodes))
    a.sum_duplicates()
    if a.nnz and a.data.max() > 1:
        raise DataError("duplicate edge")
    return AttributedGraph(a, np.asarray(features, dtype=np.uint8), node_ids)


def apply_flip(graph: AttributedGraph, flip: EdgeFlip) -> AttributedGraph:
    present = graph.has_edge(flip.u, flip.v)
    if present != (flip.action == REMOVE):
        raise StateError(
            f"cannot {flip.action} ({flip.u},{flip.v}): edge {'present' if present else 'absent'}"
        )
    n = graph.n_nodes
    delta = sp.csr_matrix(
        ([flip.sign, flip.sign], ([flip.u, flip.v], [flip.v, flip.u])), shape=(n, n)
    )
    a = (graph.adjacency + delta).tocsr()
    a.eliminate_zeros()
    a.sort_indices()
    return replace(graph, adjacency=a, n_perturbations=graph.n_perturbations + 1)


def apply_flips(graph: AttributedGraph, flips: Sequence[EdgeFlip]) -> AttributedGraph:
    for f in flips:
        graph = apply_flip(graph, f)
    return graph


def perturbation_count(before: AttributedGraph, after: AttributedGraph) -> int:
    """N_p = sum |A - A'| / 2."""
    return int(abs(before.adjacency - after.adjacency).sum() // 2)


def avg_clustering_coefficient(graph: AttributedGraph) -> float:
    """Mean local clustering coefficient; nodes with degree < 2 count as 0."""
    a = graph.adjacency
    if graph.n_nodes == 0:
        return 0.0
    closed = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel()  # 2 * triangles
    d = graph.degrees.astype(float)
    pairs = d * (d - 1)
    cc = np.divide(closed, pairs, out=np.zeros_like(closed, dtype=float), where=pairs > 0)
    return float(cc.mean())


def make_split(graph_or_n, ratios=(0.1, 0.1, 0.8), seed: int = 0) -> DataSplit:
    """Random train/validation/test partition of all nodes.

    Train and validation sizes are ``round(n * ratio)`` (half up); the test set
    takes the remainder.
    """
    n = graph_or_n if isinstance(graph_or_n, (int, np.integer)) else graph_or_n.n_nodes
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ConfigError(f"split ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    n_train = int(np.floor(n * ratios[0] + 0.5))
    n_val = int(np.floor(n * ratios[1] + 0.5))
    if n_train + n_val > n:
        raise ConfigError("split leaves no test nodes")
    perm = np.random.default_rng(seed).permutation(n)
    return DataSplit(
        train=np.sort(perm[:n_train]),
        validation=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
        seed=seed,
    )


# ---------------------------------------------------------------- file I/O


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def _read_edges(path: Path):
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or not all(_is_int(p) for p in parts):
                raise ParseError(path, lineno, f"expected two integer node ids, got {line!r}")
            edges.append((int(parts[0]), int(parts[1]), lineno))
    return edges


def _read_csv_rows(path: Path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    header = None
    if rows and not _is_int(rows[0][0].strip()):
        header, rows = rows[0], rows[1:]
    return header, rows


def load_graph(edge_file, feature_file, label_file=None):
    """Load an attributed graph and its labels.

    Edge file: one whitespace-separated 0-based pair per line, each undirected
    edge listed once. Feature CSV: ``node_id,f0,f1,...``. Label CSV:
    ``node_id,target,private``; an empty cell marks an unknown label.
    Returns ``(graph, labels)``; ``labels`` is None without a label file.
    """
    edge_file, feature_file = Path(edge_file), Path(feature_file)
    _, frows = _read_csv_rows(feature_file)
    n = len(frows)
    width = None
    features = []
    for i, row in enumerate(frows):
        try:
            node = int(row[0])
            vals = [int(c) for c in row[1:]]
        except ValueError:
            raise ParseError(feature_file, i + 1, "non-integer feature value") from None
        if node != i:
            raise ParseError(feature_file, i + 1, f"expected node id {i}, got {node}")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ShapeError(f"{feature_file}: row {i} has {len(vals)} features, expected {width}")
        features.append(vals)
    x = np.asarray(features, dtype=np.uint8).reshape(n, width or 0)

    seen = {}
    pairs = []
    for u, v, lineno in _read_edges(edge_file):
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(edge_file, lineno, f"node id out of range [0, {n})")
        if u == v:
            raise ParseError(edge_file, lineno, f"self-loop on node {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DataError(f"{edge_file}:{lineno}: duplicate edge {key} (first on line {seen[key]})")
        seen[key] = lineno
        pairs.append(key)
    graph = from_edges(n, pairs, x)
    graph.validate()

    labels = None
    if label_file is not None:
        label_file = Path(label_file)
        _, lrows = _read_csv_rows(label_file)
        target = np.full(n, -1, dtype=np.int64)
        private = np.full(n, -1, dtype=np.int64)
        for lineno, row in enumerate(lrows, 1):
            if len(row) < 3:
                raise ParseError(label_file, lineno, "expected node_id,target,private")
            try:
                node = int(row[0])
                if row[1].strip():
                    target[node] = int(row[1])
                if row[2].strip():
                    private[node] = int(row[2])
            except (ValueError, IndexError):
                raise ParseError(label_file, lineno, f"bad label row {row!r}") from None
        labels = LabelSet(target, private)
    return graph, labels


def save_graph(graph: AttributedGraph, labels: Optional[LabelSet], directory, stem="graph"):
    """Write ``<stem>.edges``, ``<stem>.features.csv`` and ``<stem>.labels.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": directory / f"{stem}.edges",
        "features": directory / f"{stem}.features.csv",
        "labels": directory / f"{stem}.labels.csv",
    }
    with open(paths["edges"], "w") as fh:
        for u, v in graph.edges():
            fh.write(f"{u} {v}\n")
    with open(paths["features"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id"] + [f"f{j}" for j in range(graph.n_features)])
        for i, row in enumerate(graph.features):
            w.writerow([i, *row.tolist()])
    if labels is not None:
        with open(paths["labels"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "target", "private"])
            for i in range(graph.n_nodes):
                t, p = int(labels.target[i]), int(labels.private[i])
                w.writerow([i, t if t >= 0 else "", p if p >= 0 else ""])
    else:
        paths.pop("labels")
    return paths


def private_label_from_feature(graph: AttributedGraph, labels: LabelSet, column: int, keep_column=False):
    """Use feature ``column`` as the private label, removing it from X by default."""
    private = graph.features[:, column].astype(np.int64)
    x = graph.features if keep_column else np.delete(graph.features, column, axis=1)
    return replace(graph, features=x), LabelSet(labels.target, private)


# ------------------------------------------------------------ synthetic data


@dataclass
class FeatureModel:
    """How node features and the private attribute are planted in an SBM.

    Each block owns ``features_per_block`` indicator columns switched on with
    ``block_on`` (``block_off`` elsewhere). ``private_features`` columns fire
    with ``private_on`` for private=1 nodes and ``private_off`` for private=0.
    ``private_homophily`` h scales edge probabilities by (1+h) for pairs that
    share the private bit and (1-h) otherwise.
    """

    features_per_block: int = 8
    block_on: float = 0.5
    block_off: float = 0.05
    private_features: int = 8
    private_on: float = 0.3
    private_off: float = 0.1
    noise_features: int = 16
    noise_prob: float = 0.1
    private_rate: float = 0.5
    private_homophily: float = 0.0


def generate_sbm(block_sizes, intra_p: float, inter_p: float, feature_model: FeatureModel = None, seed: int = 0):
    """Stochastic block model with block id as target label.

    The private label is a Bernoulli attribute drawn independently of the
    blocks. Returns ``(graph, labels)``.
    """
    fm = feature_model or FeatureModel()
    for p in (intra_p, inter_p):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"edge probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    block = np.repeat(np.arange(len(block_sizes)), block_sizes)
    n = len(block)
    private = (rng.random(n) < fm.private_rate).astype(np.int64)

    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], intra_p, inter_p)
    if fm.private_homophily:
        h = fm.private_homophily
        p = np.clip(p * np.where(private[iu] == private[ju], 1 + h, 1 - h), 0.0, 1.0)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    k = len(block_sizes)
    owner = np.repeat(np.arange(k), fm.features_per_block)
    blk = np.where(block[:, None] == owner[None, :], fm.block_on, fm.block_off)
    prv = np.where(private[:, None] == 1, fm.private_on, fm.private_off) * np.ones((1, fm.private_features))
    noise = np.full((n, fm.noise_features), fm.noise_prob)
    probs = np.concatenate([blk, prv, noise], axis=1)
    x = (rng.random(probs.shape) < probs).astype(np.uint8)

    graph = from_edges(n, edges, x)
    return graph, LabelSet(block.astype(np.int64), private)
