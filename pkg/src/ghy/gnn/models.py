"""The four deep models, their training loop and checkpoint files.

Checkpoint file: UTF-8 JSON object with keys

``format``      the string ``"ghy-checkpoint"``
``version``     integer layout version (currently 1)
``config``      the :class:`ModelConfig` as a JSON object
``config_hash`` sha256 of the canonical config JSON
``params``      ``{name: {"shape": [...], "data": [flat floats]}}``
``optimizer``   ``{name: {"t": int, "m": {...}, "v": {...}[, "v_max": {...}]}}``

Floats are written with their shortest round-trip repr, so a save/load
cycle reproduces every array exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import diff as F
from .. import manifold as M
from ..embedding import EmbeddingMatrix, atomic_write_text
from ..graphio import Graph, SplitMask, make_splits
from ..metrics import Timer
from ..optim import Parameter, make_optimizer
from ..shallow import FermiDiracParams, sample_negatives
from . import layers as L

KINDS = ("HGNN", "HGCN", "H2HGCN", "HGCAE")
CHECKPOINT_VERSION = 1

# per-kind defaults: manifold, activation, optimizer, learning rate, dropout, trainable K
_DEFAULTS = {
    "HGNN": dict(manifold=M.POINCARE, activation="leaky_relu", optimizer="ramsgrad",
                 lr=0.01, dropout=0.5, trainable_curvature=False),
    "HGCN": dict(manifold=M.POINCARE, activation="relu", optimizer="radam",
                 lr=0.01, dropout=0.5, trainable_curvature=True),
    "H2HGCN": dict(manifold=M.LORENTZ, activation="selu", optimizer="rsgd",
                   lr=0.1, dropout=0.5, trainable_curvature=False),
    "HGCAE": dict(manifold=M.POINCARE, activation="relu", optimizer="radam",
                  lr=0.01, dropout=0.5, trainable_curvature=True),
}


@dataclass
class ModelConfig:
    kind: str = "HGCN"
    layers: int = 2
    dim: int = 10
    manifold: str | None = None
    activation: str | None = None
    optimizer: str | None = None
    lr: float | None = None
    dropout: float | None = None
    trainable_curvature: bool | None = None
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0
    task: str = "node-classification"
    lam: float = 1.0
    fd_r: float = 2.0
    fd_t: float = 1.0
    clip_radius: float | None = 3.0  # H2HGCN only: max distance from the origin
    instrument: bool = False

    def __post_init__(self):
        self.kind = self.kind.upper().replace("-", "")
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for k, v in _DEFAULTS[self.kind].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.layers != 2:
            raise ValueError("only two-layer architectures are implemented")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.clip_radius is not None and not self.clip_radius > 0:
            raise ValueError("clip_radius must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.kind == "H2HGCN" and self.manifold != M.LORENTZ:
            raise ValueError("H2HGCN runs on the lorentz model")
        if self.kind == "HGCAE" and self.manifold != M.POINCARE:
            raise ValueError("HGCAE runs on the poincare model")
        if self.manifold not in (M.POINCARE, M.LORENTZ):
            raise ValueError(f"unsupported manifold {self.manifold!r}")
        if self.activation not in F.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.task not in ("node-classification", "reconstruction", "link-prediction"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind != "HGCAE" and self.task != "node-classification":
            raise ValueError(f"{self.kind} is trained for node-classification only")
        if self.kind == "HGCAE" and self.task == "node-classification":
            self.task = "reconstruction"

    @property
    def supervised(self):
        return self.kind != "HGCAE"

    @property
    def fd(self):
        return FermiDiracParams(self.fd_r, self.fd_t)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --- parameters -------------------------------------------------------------

def xavier(rng, d_out, d_in):
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, (d_out, d_in))


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def init_params(cfg: ModelConfig, in_dim: int) -> dict[str, Parameter]:
    """Named Euclidean parameters; all live in tangent spaces or are weights."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    p = {}

    def add(name, arr):
        p[name] = Parameter(arr, name=name)

    if cfg.kind == "HGNN":
        add("W0", xavier(rng, d, in_dim))
        add("W1", xavier(rng, d, d))
    elif cfg.kind == "HGCN":
        for i, (o, n_in) in enumerate([(d, in_dim), (d, d)]):
            add(f"W{i}", xavier(rng, o, n_in))
            add(f"b{i}", np.zeros(o))
            add(f"a{i}", xavier(rng, 1, 2 * o)[0])
    elif cfg.kind == "H2HGCN":
        add("W_in", xavier(rng, d, in_dim))
        bound = 1.0 / np.sqrt(in_dim)
        add("b_in", rng.uniform(-bound, bound, d))
        add("Q0", random_orthogonal(rng, d))
        add("Q1", random_orthogonal(rng, d))
    elif cfg.kind == "HGCAE":
        dims = [(d, in_dim), (d, d), (d, d), (in_dim, d)]
        for i, (o, n_in) in enumerate(dims):
            add(f"W{i}", xavier(rng, o, n_in))
            add(f"b{i}", np.zeros(o))
            add(f"a{i}", xavier(rng, 1, 2 * o)[0])
    n_curv = {"HGNN": 2, "HGCN": 2, "H2HGCN": 2, "HGCAE": 4}[cfg.kind]
    if cfg.trainable_curvature:
        for i in range(n_curv):
            add(f"kappa{i}", np.zeros(1))
    if cfg.supervised:
        add("head_w", np.zeros(d))
        add("head_b", np.zeros(1))
    return p


# --- forward passes ---------------------------------------------------------

@dataclass
class ForwardOut:
    embedding: object  # points of the last encoder layer
    K: object  # curvature of the embedding
    logits: object = None
    recon: object = None  # HGCAE tangent reconstruction of the features


def _curvatures(cfg, v, count):
    if cfg.trainable_curvature:
        return [F.exp(v[f"kappa{i}"]) for i in range(count)]
    return [1.0] * count


def _dropout(t, p, rng):
    if rng is None or p == 0.0:
        return t
    mask = (rng.random(t.shape) >= p) / (1.0 - p)
    return t * mask


def forward(cfg: ModelConfig, v: dict, graph: Graph, rng=None, diag: L.Diagnostics | None = None):
    """Run the encoder (and decoder/head). ``v`` maps names to arrays or
    Tensors; ``rng`` enables dropout (training mode)."""
    X = graph.features
    adj = graph.norm_adj
    model = cfg.manifold
    k = M.get(model)
    act = cfg.activation

    def watch(x, K):
        if diag is not None:
            diag.point(x, model, K)
        return x

    if cfg.kind == "HGNN":
        K0, K1 = _curvatures(cfg, v, 2)
        h = watch(L.feature_lift(_dropout(X, cfg.dropout, rng), K0, model), K0)
        h = watch(L.hgnn_layer(h, adj, L.LayerParams(v["W0"], K=K0, activation=act), model), K0)
        h = L.curvature_change(h, K0, K1, model) if cfg.trainable_curvature else h
        h = _drop_points(h, cfg, rng, K1, model)
        h = watch(L.hgnn_layer(h, adj, L.LayerParams(v["W1"], K=K1), model), K1)
        K_out = K1
    elif cfg.kind == "HGCN":
        K0, K1 = _curvatures(cfg, v, 2)
        h = watch(L.feature_lift(_dropout(X, cfg.dropout, rng), K0, model), K0)
        for i, (Ki, Knext, last) in enumerate([(K0, K1, False), (K1, K1, True)]):
            P = L.LayerParams(v[f"W{i}"], v[f"b{i}"], Ki, v[f"a{i}"], act)
            h = watch(L.hgcn_linear(h, P, model), Ki)
            h = watch(L.hgcn_attention_aggregate(h, adj, P, model), Ki)
            if not last:
                h = L.tangent_activation(h, act, Ki, Knext, model)
                h = watch(_drop_points(h, cfg, rng, Knext, model), Knext)
        K_out = K1
    elif cfg.kind == "H2HGCN":
        K = 1.0
        t = _dropout(X, cfg.dropout, rng) @ F.transpose(v["W_in"]) + v["b_in"]
        h = watch(L.feature_lift(L.clip_tangent(t, cfg.clip_radius), K, M.LORENTZ), K)
        for i in range(2):
            before = h
            h = L.h2h_lorentz_linear(h, v[f"Q{i}"], check=False)
            if diag is not None:
                diag.isometry(F.value_of(before), F.value_of(h))
            h = watch(L.h2h_aggregate(h, adj, K, act if i == 0 else "identity", cfg.clip_radius), K)
            if i == 0:
                h = _drop_points(h, cfg, rng, K, M.LORENTZ, cfg.clip_radius)
        K_out = K
    else:  # HGCAE
        Ks = _curvatures(cfg, v, 4)
        h = watch(L.feature_lift(_dropout(X, cfg.dropout, rng), Ks[0], model), Ks[0])
        emb = None
        for i in range(4):
            last_of_block = i in (1, 3)
            P = L.LayerParams(v[f"W{i}"], v[f"b{i}"], Ks[i], v[f"a{i}"],
                              "identity" if last_of_block else act)
            h = watch(L.hgcae_layer(h, adj, P, model), Ks[i])
            if i == 1:
                emb = h
            if i < 3:
                h = L.curvature_change(h, Ks[i], Ks[i + 1], model)
                if i != 1:
                    h = _drop_points(h, cfg, rng, Ks[i + 1], model)
        recon = k.to_tangent0(h, Ks[3])
        return ForwardOut(emb, Ks[1], recon=recon)

    out = ForwardOut(h, K_out)
    if cfg.supervised:
        t = k.to_tangent0(h, K_out)
        out.logits = L.logreg_logits(t, v["head_w"], v["head_b"])
    return out


def _drop_points(h, cfg, rng, K, model, radius=None):
    """Dropout on the origin-tangent representation between layers."""
    if rng is None or cfg.dropout == 0.0:
        return h
    k = M.get(model)
    t = _dropout(k.to_tangent0(h, K), cfg.dropout, rng)
    return k.from_tangent0(L.clip_tangent(t, radius), K)


# --- losses -----------------------------------------------------------------

def hgcae_loss(emb, graph: Graph, lam=1.0, K=1.0, recon=None, neg=None, rng=None,
               fd: FermiDiracParams = FermiDiracParams(), parts=False):
    """L_REC-A + lam * L_REC-X.

    L_REC-A is the binary cross-entropy of Fermi-Dirac edge probabilities
    over all edges (target 1) and as many sampled non-edges (target 0).
    L_REC-X is the mean squared error between ``recon`` and the features.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    pos = graph.edges
    if neg is None:
        if rng is None:
            raise ValueError("pass sampled non-edges or an rng to draw them")
        heads = pos[np.arange(len(pos)), rng.integers(0, 2, len(pos))]
        neg = sample_negatives(graph, heads, 1, rng)
    pairs = np.concatenate([pos, np.asarray(neg, dtype=np.int64).reshape(-1, 2)])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(pairs) - len(pos))])
    d = M.PoincareBall.dist(F.gather(emb, pairs[:, 0]), F.gather(emb, pairs[:, 1]), K)
    logits = (fd.r - d) / fd.t
    rec_a = L.bce_logits(logits, y)
    if recon is None or lam == 0:
        rec_x = 0.0
        total = rec_a
    else:
        diff = recon - graph.features
        rec_x = F.mean(diff * diff)
        total = rec_a + lam * rec_x
    if parts:
        return total, rec_a, rec_x
    return total


# --- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    embedding: EmbeddingMatrix
    config: ModelConfig
    params: dict
    optimizer_state: dict
    losses: list
    train_seconds: float
    scores: np.ndarray | None = None  # head logits, supervised kinds
    splits: SplitMask | None = None
    val_accuracy: float | None = None
    diagnostics: L.Diagnostics | None = None
    history: dict = field(default_factory=dict)


def _check_inputs(graph: Graph, cfg: ModelConfig, splits):
    if graph.n == 0:
        raise ValueError("empty graph")
    if cfg.supervised:
        if graph.labels is None:
            raise ValueError(f"{cfg.kind} needs node labels for its classification head")
        if splits is None:
            splits = make_splits(graph.labels, cfg.seed)
        if len(np.unique(graph.labels[splits.train])) < 2:
            raise ValueError("training split has a single class")
    elif graph.num_edges == 0:
        raise ValueError("HGCAE needs at least one edge")
    return splits


def train_model(graph: Graph, cfg: ModelConfig, splits: SplitMask | None = None) -> TrainResult:
    splits = _check_inputs(graph, cfg, splits)
    params = init_params(cfg, graph.features.shape[1])
    opt = make_optimizer(cfg.optimizer, list(params.values()), lr=cfg.lr,
                         weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    diag = L.Diagnostics() if cfg.instrument else None
    losses, val_hist = [], []
    timer = Timer()
    with timer:
        for _ in range(cfg.epochs):
            tape = F.Tape()
            v = {name: tape.variable(p.data, name=name) for name, p in params.items()}
            out = forward(cfg, v, graph, rng=rng if cfg.dropout else None, diag=diag)
            loss = _loss(cfg, out, graph, splits, rng)
            F.backward(tape, loss)
            losses.append(float(loss.data))
            for name, p in params.items():
                p.grad = v[name].grad
            tape.release()
            opt.step()
            if cfg.kind == "H2HGCN":
                for name in ("Q0", "Q1"):
                    params[name].data = L.reorthogonalize(params[name].data)
            if cfg.supervised and splits is not None:
                val_hist.append(float(np.mean(
                    (np.asarray(F.value_of(out.logits))[splits.val, 0] > 0)
                    == (graph.labels[splits.val] == 1))))
    values = {name: p.data for name, p in params.items()}
    final = forward(cfg, values, graph, diag=diag)
    K = float(np.asarray(final.K).reshape(-1)[0])
    emb = EmbeddingMatrix(np.asarray(final.embedding), cfg.manifold, K,
                          provenance=f"{cfg.kind} {cfg.hash()[:12]}")
    res = TrainResult(emb, cfg, values, opt.state_dict(), losses, timer.seconds,
                      splits=splits, diagnostics=diag, history={"val_accuracy": val_hist})
    if cfg.supervised:
        res.scores = np.asarray(final.logits)[:, 0]
        pred = res.scores[splits.val] > 0
        res.val_accuracy = float(np.mean(pred == (graph.labels[splits.val] == 1)))
    return res


def _loss(cfg, out, graph, splits, rng):
    if cfg.supervised:
        idx = np.flatnonzero(splits.train)
        return L.bce_logits(F.gather(out.logits, idx), graph.labels[idx])
    return hgcae_loss(out.embedding, graph, cfg.lam, out.K, recon=out.recon, rng=rng, fd=cfg.fd)


# --- checkpoints ------------------------------------------------------------

def _pack(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}


def _unpack(d):
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def checkpoint_json(result: TrainResult) -> str:
    opt = {}
    for name, st in result.optimizer_state.items():
        opt[name] = {key: (val if key == "t" else _pack(val)) for key, val in st.items()}
    doc = {
        "format": "ghy-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": result.config.to_dict(),
        "config_hash": result.config.hash(),
        "params": {name: _pack(a) for name, a in sorted(result.params.items())},
        "optimizer": dict(sorted(opt.items())),
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, result: TrainResult):
    atomic_write_text(path, checkpoint_json(result))


def load_checkpoint(path):
    """Return ``(config, params, optimizer_state)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "ghy-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {doc.get('version')} is not supported")
    cfg = ModelConfig.from_dict(doc["config"])
    if cfg.hash() != doc["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    params = {name: _unpack(d) for name, d in doc["params"].items()}
    opt = {name: {key: (val if key == "t" else _unpack(val)) for key, val in st.items()}
           for name, st in doc["optimizer"].items()}
    return cfg, params, opt


def embed_from_params(graph: Graph, cfg: ModelConfig, params: dict) -> EmbeddingMatrix:
    """Inference pass with stored parameters."""
    out = forward(cfg, params, graph)
    K = float(np.asarray(out.K).reshape(-1)[0])
    return EmbeddingMatrix(np.asarray(out.embedding), cfg.manifold, K,
                           provenance=f"{cfg.kind} {cfg.hash()[:12]}")
