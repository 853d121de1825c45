"""Signed message passing analysis and multiset-to-multiset GNNs.

A small, self-contained laboratory for studying why signed propagation
collapses class structure on heterophilic graphs and how partition-then-pool
(multiset-to-multiset) message passing avoids it: synthetic graph sampling,
closed-form mean dynamics, a trainable chunk-attention GNN on a from-scratch
autodiff engine, and the analyses that go with them.
"""

__version__ = "0.1.0"
