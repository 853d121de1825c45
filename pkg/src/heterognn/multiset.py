"""Multiset pooling primitives and the harnesses built on them.

Two ways to summarize a multiset of vectors: pool everything into a single
vector (``m2e_pool``), or partition the multiset, pool each part, and
concatenate the parts (``m2m_pool``). The second is at least as
discriminative as the first, and the gap is what the chunked message-passing
model exploits. This module keeps the label-aware neighborhood summaries
(``one_hop_desirable_m2m``, ``d_hop_oracle``) and the expected chunked-mean
dynamics (``m2m_expected_step``) as plain-ndarray reference computations so
tests can compare the trainable model against them.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "VectorMultiset", "Partition", "label_partition",
    "m2e_pool", "m2m_pool", "one_hop_desirable_m2m",
    "stacked_one_hop", "d_hop_oracle",
    "distance_compare", "maxima_first_partition",
    "m2m_expected_step", "chunked_distance", "relu_contraction_check",
]

_POOL_MODES = ("sum", "mean", "max")
_ORACLE_WIDTH_LIMIT = 65536


@dataclass(frozen=True)
class VectorMultiset:
    """A finite multiset of equal-width real vectors; duplicates preserved.

    ``tags`` optionally assigns an integer class to each element, enabling
    `label_partition`.
    """

    elements: np.ndarray
    tags: Optional[np.ndarray] = None

    def __post_init__(self):
        el = np.atleast_2d(np.asarray(self.elements, dtype=np.float64))
        object.__setattr__(self, "elements", el)
        if self.tags is not None:
            tags = np.asarray(self.tags, dtype=np.int64)
            if tags.shape != (el.shape[0],):
                raise ValueError("need one tag per element")
            object.__setattr__(self, "tags", tags)

    def __len__(self) -> int:
        return self.elements.shape[0]

    @property
    def width(self) -> int:
        return self.elements.shape[1]


@dataclass(frozen=True)
class Partition:
    """Assignment of multiset element indices to groups 0..n_groups-1.

    Groups may be empty (an absent class still claims its block, which pools
    to the zero vector).
    """

    assignment: np.ndarray
    n_groups: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if self.n_groups < 1:
            raise ValueError("need at least one group")
        if a.size and (a.min() < 0 or a.max() >= self.n_groups):
            raise ValueError("group ids out of range")

    def members(self, group: int) -> np.ndarray:
        return np.nonzero(self.assignment == group)[0]


def label_partition(ms: VectorMultiset, n_groups: Optional[int] = None) -> Partition:
    """Group a tagged multiset strictly by class tag."""
    if ms.tags is None:
        raise ValueError("multiset has no class tags")
    if n_groups is None:
        n_groups = int(ms.tags.max()) + 1 if len(ms) else 1
    return Partition(ms.tags, n_groups)


def _transformed(ms: VectorMultiset, weight) -> np.ndarray:
    if weight is None:
        return ms.elements
    return ms.elements @ np.asarray(weight, dtype=np.float64)


def _pool(rows: np.ndarray, mode: str, denom: Optional[int] = None) -> np.ndarray:
    """Pool the rows of a nonempty block; ``denom`` overrides the mean divisor."""
    if mode == "sum":
        return rows.sum(axis=0)
    if mode == "mean":
        return rows.sum(axis=0) / (denom if denom is not None else rows.shape[0])
    if mode == "max":
        return rows.max(axis=0)
    raise ValueError(f"unknown pooling mode {mode!r}")


def m2e_pool(ms: VectorMultiset, weight=None, mode: str = "sum") -> np.ndarray:
    """Pool the whole multiset (after an optional linear map) into one vector."""
    if mode not in _POOL_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}")
    rows = _transformed(ms, weight)
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1])
    return _pool(rows, mode)


def m2m_pool(
    ms: VectorMultiset,
    partition: Partition,
    weight=None,
    mode: str = "sum",
    full_size_mean: bool = True,
) -> np.ndarray:
    """Pool each partition group separately and concatenate in group order.

    With ``full_size_mean`` (the default) the mean divides every group's sum
    by the size of the whole multiset rather than the group, so the group
    blocks of a mean-pooled multiset add back up to its single-vector mean.
    Empty groups contribute zero blocks.
    """
    if mode not in _POOL_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}")
    if partition.assignment.shape[0] != len(ms):
        raise ValueError("partition does not index this multiset")
    rows = _transformed(ms, weight)
    f = rows.shape[1]
    denom = len(ms) if (mode == "mean" and full_size_mean) else None
    blocks = []
    for g in range(partition.n_groups):
        members = partition.members(g)
        if members.size == 0:
            blocks.append(np.zeros(f))
        else:
            blocks.append(_pool(rows[members], mode, denom))
    return np.concatenate(blocks)


def one_hop_desirable_m2m(
    features: np.ndarray,
    graph,
    labels,
    weight=None,
    mode: str = "sum",
    n_classes: Optional[int] = None,
    full_size_mean: bool = True,
) -> np.ndarray:
    """Label-blocked neighborhood summary: one block per class, per node.

    Block t of node i pools the (transformed) features of i's in-neighbors
    whose label is t; classes absent from the neighborhood leave zero blocks,
    and isolated nodes get all-zero messages. This is the idealized,
    true-label version of what the attention layers learn to approximate.
    """
    if mode not in _POOL_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}")
    labels = np.asarray(labels, dtype=np.int64)
    C = n_classes if n_classes is not None else graph.n_classes
    X = np.asarray(features, dtype=np.float64)
    if weight is not None:
        X = X @ np.asarray(weight, dtype=np.float64)
    n, f = graph.n_nodes, X.shape[1]
    vals = X[graph.arc_src]
    slot = graph.arc_dst * C + labels[graph.arc_src]
    counts = np.bincount(slot, minlength=n * C).astype(np.float64)
    if mode == "max":
        out = np.full((n * C, f), -np.inf)
        np.maximum.at(out, slot, vals)
        out[counts == 0] = 0.0
    else:
        out = np.zeros((n * C, f))
        np.add.at(out, slot, vals)
        if mode == "mean":
            if full_size_mean:
                indeg = np.bincount(graph.arc_dst, minlength=n).astype(np.float64)
                div = np.repeat(indeg, C)
            else:
                div = counts
            nonzero = div > 0
            out[nonzero] /= div[nonzero, None]
    return out.reshape(n, C * f)


def _block_diagonal(blocks) -> np.ndarray:
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    r = sum(b.shape[0] for b in blocks)
    c = sum(b.shape[1] for b in blocks)
    out = np.zeros((r, c))
    i = j = 0
    for b in blocks:
        out[i : i + b.shape[0], j : j + b.shape[1]] = b
        i += b.shape[0]
        j += b.shape[1]
    return out


def stacked_one_hop(
    features: np.ndarray,
    graph,
    labels,
    d: int,
    weights=None,
    n_classes: Optional[int] = None,
) -> np.ndarray:
    """Apply the label-blocked one-hop summary d times with sum pooling.

    ``weights`` mirrors `d_hop_oracle`: None keeps every layer's map the
    identity; otherwise it is ``[W1, blocks2, ..., blocksd]`` where ``W1``
    maps raw features and ``blocksk`` holds the C^(k-1) square blocks of the
    k-th layer's block-diagonal map, indexed lexicographically by the label
    sequences of the incoming blocks.
    """
    if d < 1:
        raise ValueError("need at least one hop")
    C = n_classes if n_classes is not None else graph.n_classes
    H = np.asarray(features, dtype=np.float64)
    w1 = None if weights is None else weights[0]
    H = one_hop_desirable_m2m(H, graph, labels, w1, "sum", C)
    for k in range(2, d + 1):
        if weights is None:
            w = None
        else:
            w = _block_diagonal(weights[k - 1])
        H = one_hop_desirable_m2m(H, graph, labels, w, "sum", C)
    return H


def d_hop_oracle(
    features: np.ndarray,
    graph,
    labels,
    d: int,
    weights=None,
    n_classes: Optional[int] = None,
    max_width: int = _ORACLE_WIDTH_LIMIT,
) -> np.ndarray:
    """Walk-enumeration reference for the d-fold label-blocked summary.

    Enumerates every length-d walk from each node (revisits allowed), keys it
    by the label sequence of the visited nodes (first hop most significant),
    sums the walk endpoints' raw features per sequence, and multiplies each
    bucket by the cumulative weight of its sequence. The output has C^d
    blocks per node and must match `stacked_one_hop` exactly.

    The cumulative weight of a sequence chains the per-layer blocks by label
    suffix: the layer-k block applied to a walk is the one indexed by the
    walk's last k-1 labels.
    """
    if d < 1:
        raise ValueError("need at least one hop")
    labels = np.asarray(labels, dtype=np.int64)
    C = n_classes if n_classes is not None else graph.n_classes
    X = np.asarray(features, dtype=np.float64)
    if weights is None:
        fp = X.shape[1]
    else:
        fp = np.asarray(weights[0]).shape[1]
    width = C**d * fp
    if width > max_width:
        raise ValueError(
            f"{C}^{d} blocks of width {fp} exceed the {max_width}-column cap"
        )

    def cumulative(seq) -> Optional[np.ndarray]:
        if weights is None:
            return None
        w = np.asarray(weights[0], dtype=np.float64)
        for k in range(2, d + 1):
            suffix = seq[d - (k - 1):]
            idx = 0
            for s in suffix:
                idx = idx * C + s
            w = w @ np.asarray(weights[k - 1][idx], dtype=np.float64)
        return w

    seqs = [()]
    for _ in range(d):
        seqs = [s + (c,) for s in seqs for c in range(C)]
    cum = {seq: cumulative(seq) for seq in seqs}

    out = np.zeros((graph.n_nodes, width))
    for i in range(graph.n_nodes):
        buckets = {}
        stack = [(i, ())]
        while stack:
            node, seq = stack.pop()
            if len(seq) == d:
                if seq in buckets:
                    buckets[seq] += X[node]
                else:
                    buckets[seq] = X[node].copy()
                continue
            for j in graph.in_neighbors(node):
                stack.append((j, seq + (int(labels[j]),)))
        for seq, total in buckets.items():
            t = 0
            for s in seq:
                t = t * C + s
            block = total if cum[seq] is None else total @ cum[seq]
            out[i, t * fp : (t + 1) * fp] = block
    return out


def distance_compare(
    x_a: VectorMultiset,
    x_b: VectorMultiset,
    partition: Partition,
    weight=None,
    mode: str = "sum",
    full_size_mean: bool = True,
):
    """Distances between two index-aligned multisets, chunked vs collapsed.

    Returns ``(m2m, m2e)``: the Euclidean distance between the partitioned
    concatenations and between the single-vector poolings. The partition is
    shared, which encodes the alignment assumption.
    """
    if len(x_a) != len(x_b):
        raise ValueError("aligned comparison needs equal multiset sizes")
    m2m = np.linalg.norm(
        m2m_pool(x_a, partition, weight, mode, full_size_mean)
        - m2m_pool(x_b, partition, weight, mode, full_size_mean)
    )
    m2e = np.linalg.norm(
        m2e_pool(x_a, weight, mode) - m2e_pool(x_b, weight, mode)
    )
    return float(m2m), float(m2e)


def maxima_first_partition(x_a: VectorMultiset, x_b: VectorMultiset) -> Partition:
    """Two-group partition isolating both multisets' componentwise maxima.

    Group 0 collects every index that attains a per-dimension maximum in
    either multiset, so max-pooling group 0 alone already reproduces each
    multiset's collapsed max vector. Under this arrangement the chunked
    distance can only add to the collapsed one.
    """
    if len(x_a) != len(x_b):
        raise ValueError("aligned comparison needs equal multiset sizes")
    keep = set(np.argmax(x_a.elements, axis=0)) | set(np.argmax(x_b.elements, axis=0))
    assignment = np.ones(len(x_a), dtype=np.int64)
    assignment[sorted(keep)] = 0
    return Partition(assignment, 2)


def m2m_expected_step(p: float, q: float, chunks: int, prior_means):
    """Expected chunked class means after one label-blocked averaging step.

    ``prior_means`` holds one row per class; the step requires one chunk per
    class (the idealized oracle setting). Class c's next mean concatenates
    the prior means scaled by p/(p+(chunks-1)q) on its own chunk and
    q/(p+(chunks-1)q) elsewhere. Also returns the matrix of pairwise
    separation lower bounds |p-q|/(p+(chunks-1)q)*(|prior_a|+|prior_b|),
    which the summed per-chunk distance of the outputs always meets.
    """
    prior = np.atleast_2d(np.asarray(prior_means, dtype=np.float64))
    n_classes, f = prior.shape
    if chunks != n_classes:
        raise ValueError("expected-step oracle needs one chunk per class")
    den = p + (chunks - 1) * q
    if den <= 0:
        raise ValueError("p + (chunks-1)q must be positive")
    coef = np.full((n_classes, chunks), q / den)
    np.fill_diagonal(coef, p / den)
    # row c: blocks t = coef[c, t] * prior[t]
    next_means = (coef[:, :, None] * prior[None, :, :]).reshape(n_classes, chunks * f)
    norms = np.linalg.norm(prior, axis=1)
    bounds = abs(p - q) / den * (norms[:, None] + norms[None, :])
    np.fill_diagonal(bounds, 0.0)
    return next_means, bounds


def chunked_distance(row_a, row_b, chunks: int) -> float:
    """Sum over chunks of the per-chunk Euclidean distances."""
    a = np.asarray(row_a, dtype=np.float64)
    b = np.asarray(row_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two flat vectors of equal length")
    if a.shape[0] % chunks:
        raise ValueError("length not divisible by chunk count")
    da = a.reshape(chunks, -1)
    db = b.reshape(chunks, -1)
    return float(np.linalg.norm(da - db, axis=1).sum())


def relu_contraction_check(a, b) -> bool:
    """True when clipping negatives does not increase the pair's distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("need equal shapes")
    clipped = np.linalg.norm(np.maximum(a, 0.0) - np.maximum(b, 0.0))
    return bool(clipped <= np.linalg.norm(a - b))
