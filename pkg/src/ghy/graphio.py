"""Graph container, file loaders, adjacency normalization and splits.

File formats
------------
Edge list: UTF-8 text, one ``src dst`` pair of integers per line separated
by whitespace. Blank lines and lines starting with ``#`` are ignored. Node
ids are compacted to ``0..n-1`` in order of first appearance; the graph is
undirected, so ``1 2`` and ``2 1`` are the same edge. Self-loops are
dropped (the normalized adjacency adds them back). A third column (edge
weight) is rejected.

Features/labels: RFC-4180 CSV with a header row. An optional first column
named ``node_id`` holds original node ids; without it, row ``i`` belongs to
compacted node ``i``. An optional last column named ``label`` holds binary
labels (0 = benign, 1 = malicious). Every other column is a numeric
feature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeList:
    edges: np.ndarray  # (m, 2) int, one row per undirected edge
    node_ids: tuple  # original id of each compacted node

    @property
    def n(self):
        return len(self.node_ids)


@dataclass(frozen=True)
class NormAdj:
    """Symmetric normalized adjacency with self-loops, in COO form.

    Entries are sorted by (row, col); ``rows[k], cols[k], weights[k]``
    says node ``rows[k]`` receives weight ``weights[k]`` from ``cols[k]``.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, (self.rows, self.cols)), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def neighbors(self, i):
        lo, hi = np.searchsorted(self.rows, [i, i + 1])
        return self.cols[lo:hi], self.weights[lo:hi]


@dataclass(frozen=True)
class SplitMask:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __iter__(self):
        return iter((("train", self.train), ("val", self.val), ("test", self.test)))

    def name_of(self) -> np.ndarray:
        out = np.full(len(self.train), "", dtype=object)
        for name, mask in self:
            out[mask] = name
        return out


@dataclass(frozen=True)
class Graph:
    n: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    node_ids: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        e = self.edges
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise GraphFormatError("edge endpoint out of range")
        if self.features.shape[0] != self.n:
            raise GraphFormatError(f"{self.features.shape[0]} feature rows for {self.n} nodes")
        if self.labels is not None and len(self.labels) != self.n:
            raise GraphFormatError(f"{len(self.labels)} labels for {self.n} nodes")

    @classmethod
    def from_edges(cls, edges, n=None, features=None, labels=None, node_ids=None):
        edges = canonical_edges(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
        if n is None:
            n = int(edges.max()) + 1 if edges.size else 0
        if features is None:
            features = np.eye(n)
        labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        return cls(n, edges, np.asarray(features, dtype=np.float64), labels, node_ids)

    @cached_property
    def norm_adj(self) -> NormAdj:
        return normalize_adjacency(self.edges, self.n)

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """Both orientations of every undirected edge, shape (2m, 2)."""
        return np.concatenate([self.edges, self.edges[:, ::-1]]) if len(self.edges) else self.edges

    @cached_property
    def message_index(self):
        """(receiver, sender) arrays over edges plus one self-loop per node,
        sorted by receiver then sender."""
        return self.norm_adj.rows, self.norm_adj.cols

    @cached_property
    def adjacency_sets(self) -> list[set]:
        out = [set() for _ in range(self.n)]
        for u, v in self.edges:
            out[u].add(int(v))
            out[v].add(int(u))
        return out

    @property
    def num_edges(self):
        return len(self.edges)


def canonical_edges(edges: np.ndarray) -> np.ndarray:
    """Drop self-loops and duplicates (either orientation), keeping the
    first appearance of each undirected edge."""
    seen = set()
    keep = []
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        if key in seen:
            continue
        seen.add(key)
        keep.append(key)
    return np.array(keep, dtype=np.int64).reshape(-1, 2)


def load_edge_list(path) -> EdgeList:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"edge list not found: {path}")
    index: dict[int, int] = {}
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tokens = s.split()
            if len(tokens) != 2:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 'src dst', got {len(tokens)} tokens"
                    + (" (weighted edges are not supported)" if len(tokens) == 3 else ""))
            try:
                u, v = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {s!r}") from None
            for node in (u, v):
                if node not in index:
                    index[node] = len(index)
            raw.append((index[u], index[v]))
    edges = canonical_edges(np.array(raw, dtype=np.int64).reshape(-1, 2))
    return EdgeList(edges, tuple(index))


def load_features_labels(path, row_normalize=False, binary=True):
    """Read the feature/label CSV.

    Returns ``(features, labels, node_ids)``; ``labels`` and ``node_ids`` are
    None when the corresponding column is absent.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise GraphFormatError(f"{path}: empty file") from None
        has_id = bool(header) and header[0] == "node_id"
        has_label = bool(header) and header[-1] == "label"
        feat_cols = slice(1 if has_id else 0, len(header) - 1 if has_label else len(header))
        feats, labels, ids = [], [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise GraphFormatError(f"{path}:{lineno}: {len(row)} fields, header has {len(header)}")
            try:
                feats.append([float(x) for x in row[feat_cols]])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value") from None
            if has_id:
                try:
                    ids.append(int(row[0]))
                except ValueError:
                    raise GraphFormatError(f"{path}:{lineno}: non-integer node_id {row[0]!r}") from None
            if has_label:
                labels.append(_parse_label(row[-1], path, lineno, binary))
    n_feat = feat_cols.stop - feat_cols.start
    features = np.array(feats, dtype=np.float64).reshape(len(feats), n_feat)
    if not np.all(np.isfinite(features)):
        raise GraphFormatError(f"{path}: non-finite feature value")
    if row_normalize:
        features = row_normalized(features)
    return (features,
            np.array(labels, dtype=np.int64) if has_label else None,
            tuple(ids) if has_id else None)


def _parse_label(tok, path, lineno, binary):
    try:
        val = float(tok)
    except ValueError:
        raise GraphFormatError(f"{path}:{lineno}: non-numeric label {tok!r}") from None
    if val != int(val) or (binary and int(val) not in (0, 1)):
        raise GraphFormatError(f"{path}:{lineno}: label {tok!r} is not in {{0, 1}}")
    return int(val)


def row_normalized(features):
    s = np.abs(features).sum(axis=1, keepdims=True)
    return features / np.where(s == 0, 1.0, s)


def load_graph(edges_path, features_path=None, row_normalize=False) -> Graph:
    el = load_edge_list(edges_path)
    if features_path is None:
        return Graph.from_edges(el.edges, el.n, node_ids=el.node_ids)
    features, labels, ids = load_features_labels(features_path, row_normalize=row_normalize)
    if len(features) != el.n:
        raise GraphFormatError(
            f"{features_path}: {len(features)} rows but the edge list has {el.n} nodes")
    if ids is not None:
        pos = {orig: i for i, orig in enumerate(ids)}
        missing = [orig for orig in el.node_ids if orig not in pos]
        if missing:
            raise GraphFormatError(f"{features_path}: no row for node ids {missing[:5]}")
        order = np.array([pos[orig] for orig in el.node_ids])
        features = features[order]
        labels = None if labels is None else labels[order]
    return Graph(el.n, el.edges, features, labels, el.node_ids)


def normalize_adjacency(edges, n) -> NormAdj:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(n)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    weights = inv_sqrt[rows] * inv_sqrt[cols]
    return NormAdj(n, rows, cols, weights)


def make_splits(labels, seed, ratios=(0.7, 0.2, 0.1)) -> SplitMask:
    """Stratified train/val/test masks, deterministic in ``seed``."""
    labels = np.asarray(labels)
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) != 3 or np.any(ratios <= 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    masks = [np.zeros(len(labels), dtype=bool) for _ in range(3)]
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < 3:
            raise ValueError(f"class {cls} has {len(members)} members; need at least 3 to stratify")
        counts = _allocate(len(members), ratios)
        perm = rng.permutation(members)
        start = 0
        for mask, c in zip(masks, counts):
            mask[perm[start:start + c]] = True
            start += c
    return SplitMask(*masks)


def _allocate(n, ratios):
    """Largest-remainder rounding of n * ratios, each part at least 1."""
    exact = n * ratios
    counts = np.floor(exact).astype(int)
    rem = n - counts.sum()
    for i in np.argsort(-(exact - counts), kind="stable")[:rem]:
        counts[i] += 1
    while np.any(counts == 0):
        counts[np.argmax(counts)] -= 1
        counts[np.argmin(counts)] += 1
    return counts


def load_cora(content_path, cites_path, malicious_classes) -> Graph:
    """Read the Cora ``.content``/``.cites`` pair with user-chosen binary labels.

    ``.content`` rows are ``paper_id word_0 ... word_k class`` (tab or space
    separated); ``.cites`` rows are ``cited citing``. Nodes keep the
    ``.content`` order and papers of ``malicious_classes`` get label 1.
    Citations naming an unknown paper are rejected.
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    for p in (content_path, cites_path):
        if not p.exists():
            raise FileNotFoundError(f"Cora file not found: {p}")
    malicious = {str(c) for c in ([malicious_classes] if isinstance(malicious_classes, str)
                                  else malicious_classes)}
    ids, feats, classes = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) < 3:
                raise GraphFormatError(f"{content_path}:{lineno}: too few fields")
            try:
                ids.append(int(tok[0]))
                feats.append([float(x) for x in tok[1:-1]])
            except ValueError:
                raise GraphFormatError(f"{content_path}:{lineno}: malformed row") from None
            classes.append(tok[-1])
    widths = {len(f) for f in feats}
    if len(widths) != 1:
        raise GraphFormatError(f"{content_path}: rows have differing feature counts {sorted(widths)}")
    unknown = malicious - set(classes)
    if unknown:
        raise GraphFormatError(f"{content_path}: no papers of class {sorted(unknown)}")
    index = {pid: i for i, pid in enumerate(ids)}
    raw = []
    with open(cites_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 2:
                raise GraphFormatError(f"{cites_path}:{lineno}: expected 'cited citing'")
            try:
                u, v = index[int(tok[0])], index[int(tok[1])]
            except (KeyError, ValueError):
                raise GraphFormatError(f"{cites_path}:{lineno}: unknown paper id in {line.strip()!r}") from None
            raw.append((u, v))
    labels = np.array([int(c in malicious) for c in classes], dtype=np.int64)
    edges = canonical_edges(np.array(raw, dtype=np.int64).reshape(-1, 2))
    return Graph(len(ids), edges, np.array(feats, dtype=np.float64), labels, tuple(ids))


def write_cora(graph: Graph, content_path, cites_path, class_names=("Benign", "Malicious")):
    """Write ``graph`` in the Cora layout (features must be 0/1 valued)."""
    ids = graph.node_ids or tuple(range(graph.n))
    lines = []
    for i, pid in enumerate(ids):
        words = "\t".join(str(int(x)) for x in graph.features[i])
        lines.append(f"{pid}\t{words}\t{class_names[int(graph.labels[i])]}")
    Path(content_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    Path(cites_path).write_text("".join(f"{ids[u]}\t{ids[v]}\n" for u, v in graph.edges),
                                encoding="utf-8")
