"""Command-line runner for the two-phase pipeline.

Config grammar (INI, read with :mod:`configparser`)::

    [data]
    edges = graph.edges            ; edge list, see ghy.graphio
    features = graph.csv           ; optional features/labels CSV
    row_normalize = false
    # or: format = cora, content = cora.content, cites = cora.cites,
    #     malicious = Neural_Networks
    # or: synthetic = sbm | tree | cora-like (with optional synthetic_seed)

    [model]
    kind = HGCAE                   ; HGNN, HGCN, H2HGCN, HGCAE or poincare
    dim = 10                       ; any ModelConfig / ShallowConfig field

    [detector]
    kinds = knn, gmm
    k = 5                          ; any DetectorConfig field

    [run]
    seed = 0
    out = runs/example
    format = csv                   ; or markdown
    reproducible = false           ; true writes TT as "-"

Relative paths are resolved against the config file's directory.
Exit codes: 0 success, 1 runtime failure, 2 bad usage, config or input.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import synthetic
from .anomaly import DetectorConfig, detect, predictions_csv
from .embedding import EmbeddingMatrix, atomic_write_text, embeddings_to_csv, read_embeddings
from .gnn.models import ModelConfig, TrainResult, checkpoint_json, train_model
from .graphio import GraphFormatError, load_cora, load_graph, make_splits, row_normalized
from .metrics import MetricsReport, format_report
from .shallow import FermiDiracParams, ShallowConfig, train_shallow

log = logging.getLogger("ghy")

SHALLOW = "POINCARE"
DETECTOR_TAG = {"knn": "KNN", "gmm": "GM"}


class ConfigError(ValueError):
    """Bad config or input; maps to exit code 2."""


@dataclasses.dataclass
class ExperimentConfig:
    path: Path
    data: dict
    model: ModelConfig | ShallowConfig
    detectors: list[DetectorConfig]
    seed: int
    out: Path
    fmt: str = "csv"
    reproducible: bool = False
    text: str = ""

    @property
    def model_kind(self):
        return SHALLOW if isinstance(self.model, ShallowConfig) else self.model.kind

    def hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


# --- config -----------------------------------------------------------------

def _coerce(value: str, typ, where: str):
    typ = str(typ)
    v = value.strip()
    try:
        if "bool" in typ:
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {v!r}")
        if v.lower() in ("none", "") and "None" in typ:
            return None
        if "int" in typ and "float" not in typ:
            return int(v)
        if "float" in typ:
            return float(v)
        return v
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _fields_from(section, cls, where, skip=()):
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, value in section.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        out[key] = _coerce(value, known[key], f"{where} {key}")
    return out


def load_config(path, seed=None, out=None, fmt=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in cp.sections():
        if name not in ("data", "model", "detector", "run"):
            raise ConfigError(f"{path}: unknown section [{name}]")
    for name in ("data", "model"):
        if not cp.has_section(name):
            raise ConfigError(f"{path}: missing section [{name}]")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    unknown = set(run) - {"seed", "out", "format", "reproducible"}
    if unknown:
        raise ConfigError(f"{path} [run]: unknown keys {sorted(unknown)}")
    if seed is None:
        if "seed" not in run:
            raise ConfigError(f"{path} [run] seed: required (or pass --seed)")
        seed = _coerce(run["seed"], int, f"{path} [run] seed")
    fmt = fmt or run.get("format", "csv").strip()
    if fmt not in ("csv", "markdown"):
        raise ConfigError(f"{path} [run] format: expected csv or markdown, got {fmt!r}")
    reproducible = _coerce(run.get("reproducible", "false"), bool, f"{path} [run] reproducible")

    base = path.parent
    data = {k: v.strip() for k, v in cp["data"].items()}
    for key in ("edges", "features", "content", "cites"):
        if key in data:
            p = Path(data[key])
            p = p if p.is_absolute() else (base / p).resolve()
            if not p.exists():
                raise ConfigError(f"{path} [data] {key}: file not found: {p}")
            data[key] = str(p)

    msec = dict(cp["model"])
    kind = msec.pop("kind", "HGCAE").strip()
    where = f"{path} [model]"
    try:
        if kind.upper() == SHALLOW:
            fd_r = _coerce(msec.pop("fd_r", "2.0"), float, f"{where} fd_r")
            fd_t = _coerce(msec.pop("fd_t", "1.0"), float, f"{where} fd_t")
            kw = _fields_from(msec, ShallowConfig, where, skip=("seed", "fd"))
            model = ShallowConfig(**kw, seed=seed, fd=FermiDiracParams(fd_r, fd_t))
        else:
            kw = _fields_from(msec, ModelConfig, where, skip=("seed", "kind"))
            model = ModelConfig(kind=kind, seed=seed, **kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None

    detectors = []
    if cp.has_section("detector"):
        dsec = dict(cp["detector"])
        kinds = [k.strip() for k in dsec.pop("kinds", "knn").split(",") if k.strip()]
        kw = _fields_from(dsec, DetectorConfig, f"{path} [detector]", skip=("seed", "kind"))
        for k in kinds:
            try:
                detectors.append(DetectorConfig(kind=k, seed=seed, **kw))
            except ValueError as exc:
                raise ConfigError(f"{path} [detector]: {exc}") from None

    h = hashlib.sha256(text.encode()).hexdigest()
    if out is None:
        out = base / run["out"] if "out" in run else Path("runs") / h[:12]
    return ExperimentConfig(path, data, model, detectors, seed, Path(out), fmt, reproducible, text)


# --- data ---------------------------------------------------------------------

def load_data(cfg: ExperimentConfig):
    d = cfg.data
    normalize = _coerce(d.get("row_normalize", "false"), bool, "[data] row_normalize")
    try:
        if "synthetic" in d:
            kind = d["synthetic"]
            s = int(d.get("synthetic_seed", "0"))
            if kind == "sbm":
                return synthetic.two_block_sbm(seed=s)
            if kind == "tree":
                return synthetic.binary_tree(int(d.get("depth", "4")))
            if kind == "cora-like":
                return synthetic.cora_like(seed=s)
            raise ConfigError(f"[data] synthetic: unknown generator {kind!r}")
        if d.get("format") == "cora":
            for key in ("content", "cites", "malicious"):
                if key not in d:
                    raise ConfigError(f"[data] {key}: required for format = cora")
            classes = [c.strip() for c in d["malicious"].split(",")]
            g = load_cora(d["content"], d["cites"], classes)
            if normalize:
                g = dataclasses.replace(g, features=row_normalized(g.features))
        else:
            if "edges" not in d:
                raise ConfigError("[data] edges: required")
            g = load_graph(d["edges"], d.get("features"), row_normalize=normalize)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except GraphFormatError as exc:
        raise ConfigError(f"input error: {exc}") from None
    return g


# --- phases -------------------------------------------------------------------

def _config_dict(model):
    return dataclasses.asdict(model)


def _shallow_checkpoint(res, model: ShallowConfig) -> str:
    cfg = _config_dict(model)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))

    def pack(a):
        a = np.asarray(a, dtype=np.float64)
        return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}

    opt = {name: {k: (v if k == "t" else pack(v)) for k, v in st.items()}
           for name, st in res.optimizer_state.items()}
    doc = {"format": "ghy-checkpoint", "version": 1, "config": cfg,
           "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
           "params": {"embedding": pack(res.embedding.points)}, "optimizer": opt}
    return json.dumps(doc, indent=1) + "\n"


def run_embed(cfg: ExperimentConfig, graph):
    """Phase one. Returns (embedding, seconds, checkpoint text)."""
    if isinstance(cfg.model, ShallowConfig):
        res = train_shallow(graph, cfg.model)
        return res.embedding, res.train_seconds, _shallow_checkpoint(res, cfg.model)
    splits = make_splits(graph.labels, cfg.seed) if graph.labels is not None else None
    res: TrainResult = train_model(graph, cfg.model, splits)
    return res.embedding, res.train_seconds, checkpoint_json(res)


def _check_node_sets(emb_ids, graph):
    ids = list(graph.node_ids) if graph.node_ids is not None else list(range(graph.n))
    if list(emb_ids) == ids:
        return
    a, b = set(emb_ids), set(ids)
    bad = sorted(a ^ b)
    if not bad:
        raise ConfigError("embedding rows are not in the graph's node order")
    raise ConfigError(f"embedding and label node sets differ; first offending ids: {bad[:5]}")


def run_detect(cfg: ExperimentConfig, graph, emb: EmbeddingMatrix, embed_seconds: float):
    """Phase two for every configured detector. Returns report rows, files and timings."""
    if graph.labels is None:
        raise ConfigError("[data]: detection needs binary labels")
    if not cfg.detectors:
        raise ConfigError("[detector] kinds: at least one detector is required")
    splits = make_splits(graph.labels, cfg.seed)
    rows, files, timings = [], {}, {"embed_seconds": embed_seconds}
    for det in cfg.detectors:
        res = detect(emb, graph.labels, splits, det)
        y_true, y_pred, scores = res.per_split["test"]
        tt = embed_seconds + res.fit_seconds
        report = MetricsReport.from_predictions(y_true, y_pred, scores, tt)
        name = f"{cfg.model_kind}+{DETECTOR_TAG[det.kind]}"
        rows.append(report.row(name, timing=not cfg.reproducible))
        files[f"predictions_{det.kind}.csv"] = predictions_csv(res, graph.labels, splits, graph.node_ids)
        timings[f"{det.kind}_fit_seconds"] = res.fit_seconds
        timings[f"{det.kind}_tt_seconds"] = tt
    return rows, files, timings


# --- outputs ------------------------------------------------------------------

def _manifest(cfg: ExperimentConfig, files: dict[str, str]) -> str:
    doc = {
        "config": str(cfg.path.name),
        "config_sha256": cfg.hash(),
        "seed": cfg.seed,
        "model": cfg.model_kind,
        "versions": {"ghy": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _write_all(out: Path, files: dict[str, str], last: str | None = None):
    """Write every file atomically; ``last`` (the report) goes last."""
    for name, text in files.items():
        if name != last:
            atomic_write_text(out / name, text)
    if last is not None:
        atomic_write_text(out / last, files[last])


def _report_name(cfg):
    return "report.md" if cfg.fmt == "markdown" else "report.csv"


def cmd_embed(cfg: ExperimentConfig) -> int:
    graph = load_data(cfg)
    emb, seconds, ckpt = run_embed(cfg, graph)
    files = {"embeddings.csv": embeddings_to_csv(emb, graph.node_ids), "checkpoint.json": ckpt}
    files["manifest.json"] = _manifest(cfg, files)
    _write_all(cfg.out, files)
    atomic_write_text(cfg.out / "timings.json", json.dumps({"embed_seconds": seconds}, indent=1) + "\n")
    print(f"TT {seconds:.2f}s  embeddings -> {cfg.out / 'embeddings.csv'}")
    return 0


def cmd_detect(cfg: ExperimentConfig, embedding_path=None) -> int:
    graph = load_data(cfg)
    path = Path(embedding_path) if embedding_path else cfg.out / "embeddings.csv"
    if not path.exists():
        raise ConfigError(f"embedding file not found: {path}")
    try:
        emb, ids = read_embeddings(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _check_node_sets(ids, graph)
    rows, files, timings = run_detect(cfg, graph, emb, 0.0)
    report = _report_name(cfg)
    files[report] = format_report(rows, cfg.fmt)
    _write_all(cfg.out, files, last=report)
    atomic_write_text(cfg.out / "timings.json", json.dumps(timings, indent=1, sort_keys=True) + "\n")
    sys.stdout.write(files[report])
    return 0


def cmd_run(cfg: ExperimentConfig) -> int:
    graph = load_data(cfg)
    try:
        emb, seconds, ckpt = run_embed(cfg, graph)
    except Exception as exc:
        raise RuntimeError(f"embed stage: {exc}") from exc
    try:
        rows, files, timings = run_detect(cfg, graph, emb, seconds)
    except ConfigError:
        raise
    except Exception as exc:
        raise RuntimeError(f"detect stage: {exc}") from exc
    files["embeddings.csv"] = embeddings_to_csv(emb, graph.node_ids)
    files["checkpoint.json"] = ckpt
    report = _report_name(cfg)
    files[report] = format_report(rows, cfg.fmt)
    files["manifest.json"] = _manifest(cfg, files)
    _write_all(cfg.out, files, last=report)
    atomic_write_text(cfg.out / "timings.json", json.dumps(timings, indent=1, sort_keys=True) + "\n")
    sys.stdout.write(files[report])
    return 0


def cmd_check(points=100, seed=0) -> int:
    from .selfcheck import geometry_suite, gradient_suite
    failed = 0
    for title, results in (("geometry", geometry_suite(seed=seed)),
                           ("gradients", gradient_suite(points=points, seed=seed))):
        for r in results:
            failed += not r.ok
            print(f"{'PASS' if r.ok else 'FAIL'}  {title}: {r.name}  ({r.detail}, {r.seconds:.2f}s)")
    print(f"{failed} failing check(s)")
    return 0 if failed == 0 else 1


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ghy", description="Hyperbolic graph embedding and node anomaly detection.")
    p.add_argument("--version", action="version", version=f"ghy {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("embed", "train phase one and write embeddings + checkpoint"),
                        ("detect", "run the detectors on an embedding file"),
                        ("run", "both phases end to end, writing a report")):
        s = sub.add_parser(verb, help=help_)
        s.add_argument("--config", required=True, help="INI experiment config")
        s.add_argument("--seed", type=int, help="overrides [run] seed")
        s.add_argument("--out", help="output directory (overrides [run] out)")
        s.add_argument("--format", choices=("csv", "markdown"), help="report format")
        if verb == "detect":
            s.add_argument("--embedding", help="embedding CSV (default: OUT/embeddings.csv)")
    c = sub.add_parser("check", help="run the geometry and gradient suites")
    c.add_argument("--points", type=int, default=100, help="random points per gradient check")
    c.add_argument("--seed", type=int, default=0)
    return p


def _setup_logging():
    level = os.environ.get("GHY_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        print(f"ghy: GHY_LOG must be error, info or debug (got {level!r})", file=sys.stderr)
        level = "error"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "check":
            return cmd_check(args.points, args.seed)
        cfg = load_config(args.config, seed=args.seed, out=args.out, fmt=args.format)
        if args.verb == "embed":
            return cmd_embed(cfg)
        if args.verb == "detect":
            return cmd_detect(cfg, args.embedding)
        return cmd_run(cfg)
    except ConfigError as exc:
        print(f"ghy: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"ghy: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
