"""Node embeddings shared by the shallow and deep models, and their CSV file.

Embedding file: UTF-8 CSV, ``\\n`` line endings, header
``node_id,model,K,x0,x1,...``, then one row per node in node order.
``model`` is ``poincare``, ``lorentz`` or ``klein``; ``K`` and the
coordinates are written with Python's shortest round-trip float repr, so
reading a file back reproduces the arrays bit for bit.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import manifold as M


@dataclass(frozen=True)
class EmbeddingMatrix:
    points: np.ndarray
    model: str
    K: float = 1.0
    provenance: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError(f"points must be (n, d), got shape {pts.shape}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "K", M.check_curvature(self.K))
        M.check_point(pts, self.model, self.K)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1] - (1 if self.model == M.LORENTZ else 0)

    def distances(self, i, j):
        """Hyperbolic distance between rows ``i`` and ``j`` (index arrays)."""
        k = M.get(self.model)
        d = k.dist(self.points[i], self.points[j], self.K)
        return np.asarray(d)[..., 0]


def atomic_write_text(path, text: str):
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(x) -> str:
    return repr(float(x))


def embeddings_to_csv(emb: EmbeddingMatrix, node_ids=None) -> str:
    n, width = emb.points.shape
    ids = range(n) if node_ids is None else node_ids
    lines = [",".join(["node_id", "model", "K"] + [f"x{j}" for j in range(width)])]
    k = fmt_float(emb.K)
    for nid, row in zip(ids, emb.points):
        lines.append(",".join([str(nid), emb.model, k] + [fmt_float(v) for v in row]))
    return "\n".join(lines) + "\n"


def write_embeddings(path, emb: EmbeddingMatrix, node_ids=None):
    atomic_write_text(path, embeddings_to_csv(emb, node_ids))


def read_embeddings(path) -> tuple[EmbeddingMatrix, list[int]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"embedding file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:3] != ["node_id", "model", "K"]:
            raise ValueError(f"{path}: not an embedding file (header {header[:3]})")
        ids, rows, models, ks = [], [], set(), set()
        for lineno, line in enumerate(fh, 2):
            cells = line.rstrip("\n").split(",")
            if len(cells) != len(header):
                raise ValueError(f"{path}:{lineno}: {len(cells)} fields, header has {len(header)}")
            ids.append(int(cells[0]))
            models.add(cells[1])
            ks.add(float(cells[2]))
            rows.append([float(c) for c in cells[3:]])
    if len(models) != 1 or len(ks) != 1:
        raise ValueError(f"{path}: rows mix models or curvatures")
    return EmbeddingMatrix(np.array(rows), models.pop(), ks.pop()), ids
