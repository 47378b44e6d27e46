"""Seeded synthetic graphs used by tests, the acceptance suite and the CLI."""

from __future__ import annotations

import numpy as np

from .graphio import Graph


def two_block_sbm(n=100, p_in=0.2, p_out=0.02, noise=0.1, seed=0) -> Graph:
    """Two equal blocks; block 1 is labeled malicious.

    Features are the one-hot block indicator plus Gaussian noise of
    standard deviation ``noise``.
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], [n - n // 2, n // 2])
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    edges = np.argwhere(upper)
    feats = np.eye(2)[labels] + noise * rng.standard_normal((n, 2))
    return Graph.from_edges(edges, n, features=feats, labels=labels)


def binary_tree(depth=4) -> Graph:
    """Balanced binary tree with ``2**(depth+1) - 1`` nodes (depth counts edges
    on a root-to-leaf path)."""
    n = 2 ** (depth + 1) - 1
    edges = [(i, c) for i in range(n) for c in (2 * i + 1, 2 * i + 2) if c < n]
    return Graph.from_edges(edges, n)


def star(leaves=4) -> Graph:
    return Graph.from_edges([(0, i) for i in range(1, leaves + 1)], leaves + 1)


def cora_like(n=2708, m=5429, n_features=1433, n_classes=7, malicious_classes=(0,),
              p_intra=0.8, words_per_node=18, seed=0) -> Graph:
    """A random graph with the size and sparsity of the Cora citation graph.

    Nodes fall into ``n_classes`` topics; edges mostly join nodes of one topic
    and binary bag-of-words features are drawn from topic-specific
    vocabularies. Labels are 1 for nodes of ``malicious_classes``.
    """
    rng = np.random.default_rng(seed)
    topic = rng.integers(0, n_classes, n)
    members = [np.flatnonzero(topic == c) for c in range(n_classes)]
    seen, edges = set(), []
    while len(edges) < m:
        u = int(rng.integers(0, n))
        if rng.random() < p_intra:
            v = int(rng.choice(members[topic[u]]))
        else:
            v = int(rng.integers(0, n))
        key = (min(u, v), max(u, v))
        if u == v or key in seen:
            continue
        seen.add(key)
        edges.append(key)
    vocab = rng.permutation(n_features)
    per_topic = np.array_split(vocab, n_classes)
    feats = np.zeros((n, n_features))
    for i in range(n):
        own = rng.choice(per_topic[topic[i]], size=words_per_node // 2, replace=False)
        other = rng.choice(n_features, size=words_per_node - len(own), replace=False)
        feats[i, own] = 1.0
        feats[i, other] = 1.0
    labels = np.isin(topic, malicious_classes).astype(np.int64)
    return Graph.from_edges(edges, n, features=feats, labels=labels)
