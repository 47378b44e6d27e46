import json

import numpy as np
import pytest

from ghy import synthetic
from ghy.cli import ConfigError, load_config, main
from ghy.embedding import read_embeddings

HEADER = "Model,Accuracy,F1-score,Recall,Precision,AUC,TT"


def write(path, text):
    path.write_text(text.strip() + "\n", encoding="utf-8")
    return path


def sbm_config(tmp_path, kinds="knn, gmm", seed=0, extra=""):
    return write(tmp_path / "exp.ini", f"""
[data]
synthetic = sbm
[model]
kind = HGCAE
epochs = 60
[detector]
kinds = {kinds}
k = 5
[run]
seed = {seed}
out = out
reproducible = true
{extra}
""")


def separable_files(tmp_path):
    # two sparse random blocks with one bridge; cliques would give identical rows
    g = synthetic.two_block_sbm(n=40, p_in=0.3, p_out=0.0, noise=0.1, seed=3)
    edges = [tuple(e) for e in g.edges] + [(0, 39)]
    write(tmp_path / "g.edges", "\n".join(f"{u} {v}" for u, v in edges))
    rows = ["node_id,f0,f1,label"] + [f"{i},{g.features[i, 0]:.4f},{g.features[i, 1]:.4f},{g.labels[i]}"
                                      for i in range(g.n)]
    write(tmp_path / "g.csv", "\n".join(rows))


def report_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0] == HEADER
    return [line.split(",") for line in lines[1:]]


class TestConfig:
    def test_missing_edges_file(self, tmp_path, capsys):
        write(tmp_path / "c.ini", "[data]\nedges = nope.edges\n[model]\nkind = poincare\n[run]\nseed = 0")
        assert main(["embed", "--config", str(tmp_path / "c.ini")]) == 2
        assert "nope.edges" in capsys.readouterr().err

    def test_unknown_detector(self, tmp_path, capsys):
        cfg = sbm_config(tmp_path, kinds="knn, forest")
        assert main(["run", "--config", str(cfg)]) == 2
        assert "forest" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        cfg = sbm_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("epochs = 60", "epochz = 60"))
        with pytest.raises(ConfigError, match="epochz"):
            load_config(cfg)

    def test_seed_required(self, tmp_path):
        write(tmp_path / "c.ini", "[data]\nsynthetic = sbm\n[model]\nkind = HGCN")
        with pytest.raises(ConfigError, match="seed"):
            load_config(tmp_path / "c.ini")
        assert load_config(tmp_path / "c.ini", seed=3).seed == 3

    def test_bad_value(self, tmp_path):
        cfg = sbm_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("epochs = 60", "epochs = many"))
        with pytest.raises(ConfigError, match="epochs"):
            load_config(cfg)

    def test_default_out_is_config_hash(self, tmp_path):
        write(tmp_path / "c.ini", "[data]\nsynthetic = sbm\n[model]\nkind = HGCN\n[run]\nseed = 1")
        cfg = load_config(tmp_path / "c.ini")
        assert cfg.out.name == cfg.hash()[:12]


class TestEmbed:
    def test_toy_shallow(self, tmp_path):
        write(tmp_path / "toy.edges", "1 2\n2 3")
        write(tmp_path / "c.ini", "[data]\nedges = toy.edges\n[model]\nkind = poincare\ndim = 2\n"
                                  "epochs = 20\n[run]\nseed = 0\nout = out")
        assert main(["embed", "--config", str(tmp_path / "c.ini")]) == 0
        emb, ids = read_embeddings(tmp_path / "out" / "embeddings.csv")
        assert ids == [1, 2, 3] and emb.points.shape == (3, 2)
        assert np.all(np.sum(emb.points ** 2, axis=1) < 1)
        doc = json.loads((tmp_path / "out" / "checkpoint.json").read_text())
        assert doc["format"] == "ghy-checkpoint"

    def test_same_seed_same_bytes(self, tmp_path):
        write(tmp_path / "toy.edges", "0 1\n1 2\n2 3\n3 0")
        write(tmp_path / "c.ini", "[data]\nedges = toy.edges\n[model]\nkind = poincare\nepochs = 30\n[run]\nseed = 5")
        outs = [tmp_path / "a", tmp_path / "b"]
        for o in outs:
            assert main(["embed", "--config", str(tmp_path / "c.ini"), "--out", str(o)]) == 0
        for name in ("embeddings.csv", "checkpoint.json", "manifest.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestRun:
    def test_separable_toy(self, tmp_path):
        separable_files(tmp_path)
        write(tmp_path / "c.ini", """
[data]
edges = g.edges
features = g.csv
[model]
kind = HGCAE
epochs = 50
[detector]
kinds = knn, gmm
k = 3
[run]
seed = 0
out = out
""")
        assert main(["run", "--config", str(tmp_path / "c.ini")]) == 0
        rows = report_rows(tmp_path / "out" / "report.csv")
        assert [r[0] for r in rows] == ["HGCAE+KNN", "HGCAE+GM"]
        for r in rows:
            assert len(r) == 7 and float(r[2]) == 100.0
            assert float(r[6]) > 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 0 and manifest["model"] == "HGCAE"
        assert set(manifest["files"]) == {"embeddings.csv", "checkpoint.json", "report.csv",
                                          "predictions_knn.csv", "predictions_gmm.csv"}
        assert (tmp_path / "out" / "timings.json").exists()

    def test_reproducible_rerun(self, tmp_path, capsys):
        cfg = sbm_config(tmp_path)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "timings.json")
        assert "report.csv" in names and "predictions_gmm.csv" in names
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = report_rows(tmp_path / "a" / "report.csv")
        assert all(r[6] == "-" for r in rows)
        assert capsys.readouterr().out.startswith(HEADER)

    def test_seed_change_is_stable(self, tmp_path):
        f1 = []
        for seed in (0, 1):
            cfg = sbm_config(tmp_path, kinds="knn", seed=seed)
            assert main(["run", "--config", str(cfg), "--out", str(tmp_path / f"s{seed}")]) == 0
            f1.append(float(report_rows(tmp_path / f"s{seed}" / "report.csv")[0][2]))
        assert abs(f1[0] - f1[1]) < 10

    def test_markdown(self, tmp_path):
        cfg = sbm_config(tmp_path, kinds="knn")
        assert main(["run", "--config", str(cfg), "--format", "markdown"]) == 0
        lines = (tmp_path / "out" / "report.md").read_text().splitlines()
        assert lines[0].startswith("| Model") and lines[0].count("|") == 8
        assert len(lines) == 3


class TestDetect:
    def test_embed_then_detect(self, tmp_path):
        cfg = sbm_config(tmp_path, kinds="knn")
        assert main(["embed", "--config", str(cfg)]) == 0
        assert main(["detect", "--config", str(cfg)]) == 0
        rows = report_rows(tmp_path / "out" / "report.csv")
        assert rows[0][0] == "HGCAE+KNN" and len(rows[0]) == 7

    def test_node_set_mismatch(self, tmp_path, capsys):
        cfg = sbm_config(tmp_path, kinds="knn")
        g = synthetic.two_block_sbm()
        lines = ["node_id,model,K,x0,x1"] + [f"{i + 500},poincare,1.0,0.1,0.0" for i in range(g.n)]
        write(tmp_path / "bad.csv", "\n".join(lines))
        assert main(["detect", "--config", str(cfg), "--embedding", str(tmp_path / "bad.csv")]) == 2
        err = capsys.readouterr().err
        assert "first offending ids: [0, 1, 2, 3, 4]" in err

    def test_missing_embedding(self, tmp_path, capsys):
        cfg = sbm_config(tmp_path, kinds="knn")
        assert main(["detect", "--config", str(cfg), "--embedding", str(tmp_path / "none.csv")]) == 2
        assert "none.csv" in capsys.readouterr().err


def test_check_verb(capsys):
    assert main(["check", "--points", "3"]) == 0
    out = capsys.readouterr().out
    assert "0 failing check(s)" in out and "FAIL" not in out
