import math

import numpy as np
import pytest

from ghy import manifold as M
from ghy import synthetic
from ghy.embedding import EmbeddingMatrix, read_embeddings, write_embeddings
from ghy.graphio import Graph
from ghy.shallow import (FermiDiracParams, ShallowConfig, fermi_dirac_prob, mean_average_precision,
                         sample_negatives, shallow_loss, train_shallow)


def test_fermi_dirac_at_zero():
    assert float(fermi_dirac_prob(0.0)) == pytest.approx(0.88079707797788244, abs=1e-15)


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        FermiDiracParams(2.0, 0.0)


def test_loss_hand_computed():
    emb = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, -0.3]])
    pos, neg = [[0, 1]], [[1, 2]]
    loss = shallow_loss(emb, pos, neg)
    d_pos = 2 * math.atanh(0.5)
    # d((0.5,0),(0,-0.3)) via the arcosh closed form
    sq = 0.25 + 0.09
    d_neg = math.acosh(1 + 2 * sq / ((1 - 0.25) * (1 - 0.09)))
    p_pos = 1 / (math.exp(d_pos - 2) + 1)
    p_neg = 1 / (math.exp(d_neg - 2) + 1)
    expect = -(math.log(p_pos) + math.log(1 - p_neg)) / 2
    assert float(loss) == pytest.approx(expect, abs=1e-12)


def test_loss_rejects_out_of_range():
    with pytest.raises(IndexError):
        shallow_loss(np.zeros((2, 2)), [[0, 5]], [])


def test_negatives_are_non_edges():
    g = synthetic.two_block_sbm(seed=0)
    rng = np.random.default_rng(0)
    heads = g.edges[:, 0]
    neg = sample_negatives(g, heads, 5, rng)
    assert len(neg) == 5 * len(heads)
    adj = g.adjacency_sets
    assert all(int(v) not in adj[int(u)] and u != v for u, v in neg)


def test_star_centre_is_central():
    g = synthetic.star(4)
    res = train_shallow(g, ShallowConfig(dim=2, epochs=200, seed=0))
    n = g.n
    idx = np.arange(n)
    mean_d = [res.embedding.distances(np.full(n, i), idx).sum() / (n - 1) for i in range(n)]
    assert int(np.argmin(mean_d)) == 0


@pytest.mark.parametrize("graph", [synthetic.star(4), synthetic.binary_tree(2)])
def test_loss_falls(graph):
    drops = []
    for seed in range(5):
        losses = train_shallow(graph, ShallowConfig(dim=5, epochs=51, seed=seed)).losses
        drops.append(losses[50] < losses[0])
    assert np.median(drops) == 1


def test_points_stay_in_ball():
    res = train_shallow(synthetic.binary_tree(3), ShallowConfig(epochs=100, lr=1.0))
    assert np.all(np.sum(res.embedding.points ** 2, axis=1) < 1.0)


def test_deterministic():
    g = synthetic.binary_tree(3)
    a = train_shallow(g, ShallowConfig(epochs=30, seed=4)).embedding.points
    b = train_shallow(g, ShallowConfig(epochs=30, seed=4)).embedding.points
    np.testing.assert_array_equal(a, b)


def test_needs_edges():
    with pytest.raises(ValueError):
        train_shallow(Graph.from_edges([], 3))


def test_map_perfect_on_exact_layout():
    # a path laid out on a geodesic: ranks are exact
    g = Graph.from_edges([(0, 1), (1, 2), (2, 3)], 4)
    pts = np.tanh(np.array([[-1.5], [-0.5], [0.5], [1.5]]) / 2) * np.array([[1.0, 0.0]])
    assert mean_average_precision(EmbeddingMatrix(pts, M.POINCARE, 1.0), g) == 1.0


def test_embedding_file_roundtrip(tmp_path):
    g = Graph.from_edges([(0, 1), (1, 2)], 3)
    res = train_shallow(g, ShallowConfig(epochs=5))
    write_embeddings(tmp_path / "e.csv", res.embedding, node_ids=(10, 11, 12))
    emb, ids = read_embeddings(tmp_path / "e.csv")
    assert ids == [10, 11, 12]
    assert emb.points.shape == (3, 10)
    np.testing.assert_array_equal(emb.points, res.embedding.points)
