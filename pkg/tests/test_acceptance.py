"""End-to-end acceptance criteria. Each test records one PASS/FAIL line,
printed together in the terminal summary."""

import itertools
import os
import time
from pathlib import Path

import numpy as np

from ghy import synthetic
from ghy.anomaly import DetectorConfig, detect
from ghy.cli import main
from ghy.gnn.models import ModelConfig, train_model
from ghy.graphio import make_splits, write_cora
from ghy.metrics import auc, confusion, prf1
from ghy.selfcheck import geometry_suite, gradient_suite
from ghy.shallow import ShallowConfig, mean_average_precision, train_shallow

SEEDS = range(5)
COLUMNS = "Model,Accuracy,F1-score,Recall,Precision,AUC,TT"


def failing(results):
    return [r.name for r in results if not r.ok]


def test_1_geometry_suite(criterion):
    t0 = time.perf_counter()
    results = geometry_suite(n=10_000, seed=0)
    secs = time.perf_counter() - t0
    bad = failing(results)
    ok = criterion(1, "geometry suite, 10^4 samples", not bad and secs < 30,
                   f"{len(results)} checks, failing {bad}, {secs:.1f}s < 30s")
    assert ok


def test_2_gradient_suite(criterion):
    t0 = time.perf_counter()
    results = gradient_suite(points=100, seed=0)
    secs = time.perf_counter() - t0
    bad = failing(results)
    ok = criterion(2, "gradient suite, 100 points per op", not bad and secs < 120,
                   f"{len(results)} ops, failing {bad}, {secs:.1f}s < 120s")
    assert ok


def brute_prf1(y, p):
    tp = sum(a and b for a, b in zip(y, p))
    tn = sum(not a and not b for a, b in zip(y, p))
    fp = sum(not a and b for a, b in zip(y, p))
    fn = sum(a and not b for a, b in zip(y, p))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return (tp + tn) / len(y), prec, rec, f1


def brute_auc(s, y):
    pos = [a for a, b in zip(s, y) if b]
    neg = [a for a, b in zip(s, y) if not b]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_3_metric_oracle(criterion):
    rng = np.random.default_rng(0)
    worked = auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0])
    bad_prf, worst_auc = 0, 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        y = rng.permutation(y)
        p = rng.integers(0, 2, n)
        # coarse scores force ties
        s = rng.integers(0, 6, n) / 5 if rng.random() < 0.5 else rng.random(n)
        bad_prf += prf1(confusion(y, p)) != brute_prf1(y.tolist(), p.tolist())
        worst_auc = max(worst_auc, abs(auc(s, y) - brute_auc(s.tolist(), y.tolist())))
    ok = criterion(3, "metric oracle, 1000 instances", bad_prf == 0 and worst_auc <= 1e-12
                   and abs(worked - 0.75) <= 1e-12,
                   f"prf1 mismatches {bad_prf}, max AUC error {worst_auc:.1e}, worked example {worked}")
    assert ok


def test_4_tree_reconstruction(criterion):
    g = synthetic.binary_tree(4)
    t0 = time.perf_counter()
    maps = [mean_average_precision(train_shallow(g, ShallowConfig(dim=10, seed=s)).embedding, g)
            for s in SEEDS]
    secs = time.perf_counter() - t0
    med = float(np.median(maps))
    ok = criterion(4, "tree depth 4 dim 10 MAP", med >= 0.95 and secs < 60,
                   f"median {med:.4f} >= 0.95 over {np.round(maps, 4).tolist()}, {secs:.1f}s < 60s")
    assert ok


def test_5_hgcn_end_to_end(criterion):
    t0 = time.perf_counter()
    accs = []
    for s in SEEDS:
        g = synthetic.two_block_sbm(seed=s)
        accs.append(train_model(g, ModelConfig(kind="HGCN", seed=s), make_splits(g.labels, s)).val_accuracy)
    secs = time.perf_counter() - t0
    med = float(np.median(accs))
    ok = criterion(5, "HGCN two-block validation accuracy", med >= 0.9 and secs < 90,
                   f"median {med:.3f} >= 0.9 over {accs}, {secs:.1f}s < 90s")
    assert ok


def test_6_hgcae_detectors(criterion):
    f1 = {"knn": [], "gmm": []}
    for s in SEEDS:
        g = synthetic.two_block_sbm(seed=s)
        splits = make_splits(g.labels, s)
        emb = train_model(g, ModelConfig(kind="HGCAE", seed=s), splits).embedding
        for kind in f1:
            y_true, y_pred, _ = detect(emb, g.labels, splits, DetectorConfig(kind=kind, seed=s)).per_split["test"]
            f1[kind].append(prf1(confusion(y_true, y_pred))[3])
    med = {k: float(np.median(v)) for k, v in f1.items()}
    ok = criterion(6, "HGCAE+KNN and HGCAE+GM test F1", min(med.values()) >= 0.85,
                   f"median F1 knn {med['knn']:.3f}, gmm {med['gmm']:.3f}, threshold 0.85")
    assert ok


def test_7_h2h_isometry(criterion):
    g = synthetic.two_block_sbm(seed=0)
    res = train_model(g, ModelConfig(kind="H2HGCN", seed=0, instrument=True), make_splits(g.labels, 0))
    d = res.diagnostics
    ok = criterion(7, "H2H-GCN Lorentz isometry over a full run",
                   d.lorentz_checks > 0 and d.lorentz_violations == 0 and d.lorentz_max_err <= 1e-12,
                   f"{d.lorentz_checks} checks over {len(res.losses)} epochs, {d.lorentz_violations} violations, "
                   f"max error {d.lorentz_max_err:.1e}")
    assert ok


def cora_config(tmp_path, content, cites, malicious):
    cfg = tmp_path / "cora.ini"
    cfg.write_text(f"[data]\nformat = cora\ncontent = {content}\ncites = {cites}\nmalicious = {malicious}\n"
                   "[model]\nkind = HGCAE\n[detector]\nkinds = knn, gmm\n[run]\nseed = 0\nout = out\n")
    return cfg


def test_8_cora_smoke(criterion, tmp_path):
    real = os.environ.get("GHY_CORA_DIR")
    if real:
        content, cites, malicious = Path(real) / "cora.content", Path(real) / "cora.cites", "Neural_Networks"
        source = "Cora"
    else:
        content, cites = tmp_path / "cora.content", tmp_path / "cora.cites"
        write_cora(synthetic.cora_like(seed=0), content, cites)
        malicious, source = "Malicious", "Cora-format synthetic"
    cfg = cora_config(tmp_path, content, cites, malicious)
    t0 = time.perf_counter()
    code = main(["run", "--config", str(cfg)])
    secs = time.perf_counter() - t0
    lines = (tmp_path / "out" / "report.csv").read_text().splitlines() if code == 0 else []
    rows = [line.split(",") for line in lines[1:]]

    def well_formed(r):
        return len(r) == 7 and all(0 <= float(x) <= 100 for x in r[1:6]) and float(r[6]) >= 0

    ok = criterion(8, f"{source} smoke run",
                   code == 0 and lines[0] == COLUMNS and len(rows) == 2 and all(map(well_formed, rows))
                   and secs < 600, f"exit {code}, rows {rows}, {secs:.0f}s < 600s")
    assert ok


def test_9_determinism(criterion, tmp_path, capsys):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[data]\nsynthetic = sbm\n[model]\nkind = HGCAE\n[detector]\nkinds = knn, gmm\n"
                   "[run]\nseed = 0\nreproducible = true\n")
    differ, compared = [], 0
    for verb in ("run", "embed", "detect"):
        outs = [tmp_path / f"{verb}_{i}" for i in range(2)]
        for o in outs:
            if verb == "detect":
                assert main(["embed", "--config", str(cfg), "--out", str(o)]) == 0
            assert main([verb, "--config", str(cfg), "--out", str(o)]) == 0
        for p in sorted(outs[0].iterdir()):
            if p.name == "timings.json":
                continue
            compared += 1
            if p.read_bytes() != (outs[1] / p.name).read_bytes():
                differ.append(f"{verb}/{p.name}")
    capsys.readouterr()
    ok = criterion(9, "byte-identical reruns", compared > 0 and not differ,
                   f"{compared} files compared, differing {differ}")
    assert ok
