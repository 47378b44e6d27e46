"""Shallow Poincaré embedding: one free point per node, fitted with a
Fermi-Dirac cross-entropy over edges and sampled non-edges."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diff as F
from . import manifold as M
from .embedding import EmbeddingMatrix
from .graphio import Graph
from .metrics import Timer
from .optim import Parameter, make_optimizer


@dataclass(frozen=True)
class FermiDiracParams:
    r: float = 2.0
    t: float = 1.0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"temperature t must be positive, got {self.t}")


@dataclass
class ShallowConfig:
    dim: int = 10
    epochs: int = 1500
    lr: float = 0.3
    negatives: int = 10
    burn_in: int = 10
    burn_in_factor: float = 0.1
    init_radius: float = 1e-3
    optimizer: str = "radam"
    seed: int = 0
    fd: FermiDiracParams = field(default_factory=FermiDiracParams)

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.negatives < 1:
            raise ValueError("need at least one negative per positive")
        if self.epochs < 0 or self.burn_in < 0:
            raise ValueError("epochs and burn_in must be nonnegative")


@dataclass
class ShallowResult:
    embedding: EmbeddingMatrix
    losses: list[float]
    train_seconds: float
    optimizer_state: dict = field(default_factory=dict)


def fermi_dirac_prob(d, fd: FermiDiracParams = FermiDiracParams()):
    """1 / (exp((d - r) / t) + 1)."""
    return F.sigmoid((fd.r - d) / fd.t)


def _pair_index(pairs, n):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise IndexError(f"batch references a node outside 0..{n - 1}")
    return pairs


def shallow_loss(emb, pos, neg, fd: FermiDiracParams = FermiDiracParams(), K=1.0):
    """Mean cross-entropy over positive pairs (target 1) and negative pairs
    (target 0). ``emb`` is an (n, d) Poincaré array or Tensor."""
    n = emb.shape[0]
    pos, neg = _pair_index(pos, n), _pair_index(neg, n)
    terms = []
    if len(pos):
        d = M.PoincareBall.dist(F.gather(emb, pos[:, 0]), F.gather(emb, pos[:, 1]), K)
        terms.append(-F.sum(F.log_sigmoid((fd.r - d) / fd.t)))
    if len(neg):
        d = M.PoincareBall.dist(F.gather(emb, neg[:, 0]), F.gather(emb, neg[:, 1]), K)
        terms.append(-F.sum(F.log_sigmoid((d - fd.r) / fd.t)))
    if not terms:
        raise ValueError("empty batch")
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return total / float(len(pos) + len(neg))


def sample_negatives(graph: Graph, heads, per_head, rng):
    """For each head node draw ``per_head`` uniform non-neighbours (no self)."""
    n = graph.n
    heads = np.repeat(np.asarray(heads, dtype=np.int64), per_head)
    codes = _edge_codes(graph)
    tails = rng.integers(0, n, size=len(heads))
    bad = _is_bad(heads, tails, codes, n)
    for _ in range(100):
        if not bad.any():
            break
        tails[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad = _is_bad(heads, tails, codes, n)
    keep = ~bad  # heads adjacent to every node get no negatives
    return np.stack([heads[keep], tails[keep]], axis=1)


def _edge_codes(graph):
    e = graph.directed_edges
    return np.sort(e[:, 0] * graph.n + e[:, 1])


def _is_bad(heads, tails, codes, n):
    q = heads * n + tails
    pos = np.searchsorted(codes, q)
    hit = (pos < len(codes)) & (codes[np.minimum(pos, len(codes) - 1)] == q)
    return hit | (heads == tails)


def train_shallow(graph: Graph, cfg: ShallowConfig = ShallowConfig()) -> ShallowResult:
    if graph.num_edges < 1:
        raise ValueError("shallow embedding needs at least one edge")
    rng = np.random.default_rng(cfg.seed)
    theta = Parameter(rng.uniform(-cfg.init_radius, cfg.init_radius, (graph.n, cfg.dim)),
                      model=M.POINCARE, K=1.0, name="embedding")
    opt = make_optimizer(cfg.optimizer, [theta], lr=cfg.lr)
    pos = graph.edges
    losses = []
    timer = Timer()
    with timer:
        for epoch in range(cfg.epochs):
            opt.lr = cfg.lr * (cfg.burn_in_factor if epoch < cfg.burn_in else 1.0)
            flip = rng.integers(0, 2, size=len(pos))
            heads = pos[np.arange(len(pos)), flip]
            neg = sample_negatives(graph, heads, cfg.negatives, rng)
            tape = F.Tape()
            x = tape.variable(theta.data, name="embedding")
            loss = shallow_loss(x, pos, neg, cfg.fd)
            F.backward(tape, loss)
            losses.append(float(loss.data))
            theta.grad = x.grad
            tape.release()
            opt.step()
    emb = EmbeddingMatrix(theta.data, M.POINCARE, 1.0, provenance=f"poincare seed={cfg.seed}")
    return ShallowResult(emb, losses, timer.seconds, opt.state_dict())


def mean_average_precision(emb: EmbeddingMatrix, graph: Graph) -> float:
    """Reconstruction MAP by exhaustive distance ranking of every node."""
    n = graph.n
    idx = np.arange(n)
    aps = []
    for u in range(n):
        nbrs = graph.adjacency_sets[u]
        if not nbrs:
            continue
        d = emb.distances(np.full(n, u), idx)
        d[u] = np.inf
        is_nbr = np.zeros(n, dtype=bool)
        is_nbr[list(nbrs)] = True
        precisions = []
        for v in nbrs:
            within = d <= d[v]
            precisions.append(is_nbr[within].sum() / within.sum())
        aps.append(np.mean(precisions))
    return float(np.mean(aps))
