"""Graph data model, TSV dataset ingestion, random splits, and homophily.

On-disk format (one directory per dataset, UTF-8, tab-separated, '\\n' line
endings, lines starting with '#' ignored):

    edges.tsv     one undirected edge per line: "<u>\\t<v>"
    features.tsv  one row of d reals per node, node id = line order
    labels.tsv    one integer class id per node
    meta.json     optional, {"n_classes": C}; otherwise C = max label + 1

The loaded graph stores every undirected edge as two directed arcs and keeps
a CSR index over arc destinations so per-node in-neighbor slices are cheap.
"""

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["Graph", "Split", "DatasetFormatError", "load_dataset",
           "save_dataset", "edge_homophily", "random_split", "largest_remainder"]

SPLIT_FRACTIONS = (0.48, 0.32, 0.20)


class DatasetFormatError(ValueError):
    """Raised when an on-disk dataset violates the documented format."""


@dataclass(frozen=True)
class Graph:
    """An undirected graph materialized as directed arcs, plus node data.

    arc_src[a] -> arc_dst[a] is one directed arc; both directions of every
    undirected edge are present. Arcs are sorted by (dst, src) and indptr is
    the CSR offset array over destinations: arcs with destination i occupy
    slice indptr[i]:indptr[i+1].
    """

    n_nodes: int
    arc_src: np.ndarray
    arc_dst: np.ndarray
    indptr: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    @property
    def n_arcs(self) -> int:
        return int(self.arc_src.shape[0])

    @property
    def n_edges(self) -> int:
        return self.n_arcs // 2

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def in_neighbors(self, i: int) -> np.ndarray:
        """Sources of all arcs pointing at node i."""
        return self.arc_src[self.indptr[i] : self.indptr[i + 1]]


def build_graph(n_nodes, undirected_edges, features, labels, n_classes) -> Graph:
    """Assemble a Graph from deduplicated undirected edges.

    undirected_edges is an (E, 2) int array with u != v for every row;
    both arc directions are materialized here.
    """
    edges = np.asarray(undirected_edges, dtype=np.int64).reshape(-1, 2)
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != n_nodes or labels.shape[0] != n_nodes:
        raise ValueError("features and labels must have one row per node")
    if edges.size:
        if edges.min() < 0 or edges.max() >= n_nodes:
            raise ValueError("edge endpoint out of range")
        if (edges[:, 0] == edges[:, 1]).any():
            raise ValueError("self-loops are not represented")
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, dst + 1, 1)
    np.cumsum(indptr, out=indptr)
    return Graph(int(n_nodes), src, dst, indptr, features, labels, int(n_classes))


def _data_lines(path):
    """Yield (line_number, stripped_text) for content lines of a TSV file."""
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.rstrip("\n")
            if not text or text.startswith("#"):
                continue
            yield lineno, text


def load_dataset(path, row_normalize=False) -> Graph:
    """Load a dataset directory into a Graph.

    row_normalize divides each feature row by its L1 mass (rows summing to
    zero are left untouched). Duplicate undirected edges are collapsed and
    self-loops are dropped with a warning.
    """
    edges_path = os.path.join(path, "edges.tsv")
    feats_path = os.path.join(path, "features.tsv")
    labels_path = os.path.join(path, "labels.tsv")
    for p in (edges_path, feats_path, labels_path):
        if not os.path.isfile(p):
            raise DatasetFormatError(f"missing required file: {p}")

    features = []
    width = None
    for lineno, text in _data_lines(feats_path):
        parts = text.split("\t")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise DatasetFormatError(
                f"{feats_path}:{lineno}: expected {width} columns, got {len(parts)}"
            )
        try:
            features.append([float(v) for v in parts])
        except ValueError as exc:
            raise DatasetFormatError(f"{feats_path}:{lineno}: {exc}") from None
    if not features:
        raise DatasetFormatError(f"{feats_path}: no feature rows")
    features = np.asarray(features, dtype=np.float64)
    n_nodes = features.shape[0]

    labels = []
    for lineno, text in _data_lines(labels_path):
        try:
            labels.append(int(text.strip()))
        except ValueError:
            raise DatasetFormatError(
                f"{labels_path}:{lineno}: labels must be integers"
            ) from None
    if len(labels) != n_nodes:
        raise DatasetFormatError(
            f"{labels_path}: {len(labels)} labels for {n_nodes} feature rows"
        )
    labels = np.asarray(labels, dtype=np.int64)

    n_classes = None
    meta_path = os.path.join(path, "meta.json")
    if os.path.isfile(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        n_classes = meta.get("n_classes")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n_nodes else 0
    if labels.min() < 0 or labels.max() >= n_classes:
        bad = int(np.argmax((labels < 0) | (labels >= n_classes)))
        raise DatasetFormatError(
            f"{labels_path}: label {labels[bad]} of node {bad} outside [0, {n_classes})"
        )

    seen = set()
    edges = []
    n_self = 0
    for lineno, text in _data_lines(edges_path):
        parts = text.split("\t")
        if len(parts) != 2:
            raise DatasetFormatError(
                f"{edges_path}:{lineno}: expected two columns, got {len(parts)}"
            )
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetFormatError(
                f"{edges_path}:{lineno}: endpoints must be integers"
            ) from None
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise DatasetFormatError(
                f"{edges_path}:{lineno}: endpoint outside [0, {n_nodes})"
            )
        if u == v:
            n_self += 1
            continue
        key = (u, v) if u < v else (v, u)
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)
    if n_self:
        warnings.warn(f"{edges_path}: dropped {n_self} self-loop line(s)")

    if row_normalize:
        mass = np.abs(features).sum(axis=1, keepdims=True)
        nonzero = mass[:, 0] > 0
        features[nonzero] /= mass[nonzero]

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return build_graph(n_nodes, edges, features, labels, n_classes)


def save_dataset(path, g: Graph, arc_signs=None):
    """Write a Graph back to the TSV directory format.

    Floats are rendered with repr() so a reload is bit-exact. When arc_signs
    is given (one weight per undirected edge, aligned with the emitted edge
    order), a signs.tsv column is written alongside edges.tsv.
    """
    os.makedirs(path, exist_ok=True)
    und = self_free_undirected_edges(g)
    with open(os.path.join(path, "edges.tsv"), "w", encoding="utf-8", newline="") as fh:
        for u, v in und:
            fh.write(f"{u}\t{v}\n")
    with open(os.path.join(path, "features.tsv"), "w", encoding="utf-8", newline="") as fh:
        for row in g.features:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(os.path.join(path, "labels.tsv"), "w", encoding="utf-8", newline="") as fh:
        for y in g.labels:
            fh.write(f"{int(y)}\n")
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"n_classes": g.n_classes}, fh)
        fh.write("\n")
    if arc_signs is not None:
        signs = np.asarray(arc_signs)
        if signs.shape[0] != und.shape[0]:
            raise ValueError("one sign per undirected edge is required")
        with open(os.path.join(path, "signs.tsv"), "w", encoding="utf-8", newline="") as fh:
            for s in signs:
                fh.write(f"{int(s)}\n")


def self_free_undirected_edges(g: Graph) -> np.ndarray:
    """The (E, 2) canonical u < v edge list underlying the graph's arcs."""
    mask = g.arc_src < g.arc_dst
    pairs = np.stack([g.arc_src[mask], g.arc_dst[mask]], axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def edge_homophily(g: Graph) -> float:
    """Fraction of arcs whose endpoints share a label (same over edges)."""
    if g.n_arcs == 0:
        return float("nan")
    same = g.labels[g.arc_src] == g.labels[g.arc_dst]
    return float(same.mean())


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self):
        return (len(self.train), len(self.val), len(self.test))


def largest_remainder(n: int, fractions) -> list:
    """Integer sizes summing to n, apportioned by the largest-remainder rule.

    Ties in the fractional remainders are broken toward earlier entries.
    """
    quotas = [n * f for f in fractions]
    sizes = [int(q) for q in quotas]
    leftover = n - sum(sizes)
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(quotas[i] - sizes[i]), i)
    )
    for i in remainders[:leftover]:
        sizes[i] += 1
    return sizes


def random_split(g: Graph, seed: int, fractions=SPLIT_FRACTIONS) -> Split:
    """Uniformly random node partition with deterministic per-seed sizes."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.n_nodes)
    n_train, n_val, n_test = largest_remainder(g.n_nodes, fractions)
    return Split(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
        seed=seed,
    )
