"""Command-line experiment runner.

Subcommands: ``generate-data``, ``train``, ``diagnose``, ``filter``, ``emd``,
``mmd``. Every run is reproducible from one JSON config plus ``--seed``.
Errors go to stderr as one JSON line and map to distinct exit codes.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import errors
from .data import EmbeddingTable, PairedDataset, SynthConfig, rank_pairs, synth_generate
from .encoders import encode, load_checkpoint, save_checkpoint
from .gap import gap_report, mean_pool, write_pca_csv
from .mmd import DEFAULT_K, KernelMixtureSpec, bandwidths_from_data, mmd_squared
from .ot import WeightedPointCloud, emd_exact
from .training import METHODS, TrainConfig, train_alignment

CONFIG_VERSION = 1
DOC_VERSION = 1

EXIT_CODES = {
    "io": 3,
    "config": 4,
    "format": 5,
    "dimension": 6,
    "parameter": 7,
    "degenerate": 8,
    "marginal": 9,
    "solver": 10,
    "training": 11,
    "contract": 12,
    "batch": 13,
    "nonfinite": 14,
    "error": 1,
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}


def _obj(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


DATASET_SCHEMA = _obj({
    "n_samples": _INT_POS, "n_a": _INT_POS, "n_i": _INT_POS, "d_latent": _INT_POS,
    "d_in": _INT_POS, "d": _INT_POS, "frozen_hidden": _INT_POS,
    "mismatch_rho": {"type": "number", "minimum": 0, "maximum": 1},
    "noise_sigma": {"type": "number", "minimum": 0},
    "mismatch_shift": _NUM, "token_scale": _POS, "map_gain": _POS,
})

TRAIN_SCHEMA = _obj({
    "method": {"enum": list(METHODS)},
    "epochs": {"type": "integer", "minimum": 0},
    "batch_size": _INT_POS,
    "lr": _POS,
    "attention_lr": {"anyOf": [_POS, {"type": "null"}]},
    "cosine_decay": {"type": "boolean"},
    "K": _INT_POS,
    "hidden": _INT_POS,
    "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "eps": _POS,
    "overlap_k": _INT_POS,
    "attentive": _obj({
        "lam_start": {"type": "number", "minimum": 0},
        "lam_end": {"type": "number", "minimum": 0},
        "ramp_epochs": _INT_POS,
        "uniform_first_epoch": {"type": "boolean"},
        "tau": _POS,
    }),
    "contrastive": _obj({"temperature": _POS, "symmetric": {"type": "boolean"}}),
})

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "dataset": DATASET_SCHEMA,
        "dataset_file": {"type": "string"},
        "train": TRAIN_SCHEMA,
        "diagnose": _obj({"checkpoint": {"type": "string"}, "dataset": {"type": "string"}, "k": _INT_POS}),
        "filter": _obj({"table": {"type": "string"}, "keep_n": {"type": "integer", "minimum": 0},
                        "metric": {"enum": ["cosine", "l2"]}}),
        "mmd": _obj({"K": _INT_POS, "bandwidths": {"type": "array", "items": _POS, "minItems": 1}}),
    },
}


class IOFailure(errors.AlignError):
    kind = "io"


# ---------------------------------------------------------------------------
# helpers


def load_config(path) -> dict:
    """Read and validate an experiment config; ``None`` gives the empty config."""
    if path is None:
        return {"version": CONFIG_VERSION}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFailure(f"cannot read config '{path}': {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise errors.ConfigError(f"{where}: {exc.message}") from exc
    if "dataset" in cfg and "dataset_file" in cfg:
        raise errors.ConfigError("give either 'dataset' or 'dataset_file', not both")


def _seed(cfg: dict, override) -> int:
    return int(override) if override is not None else int(cfg.get("seed", 0))


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory '{out}': {exc.strerror}") from exc
    return out


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise IOFailure(f"no such file: '{p}'")
    return p


def _dataset_for(cfg: dict, seed: int) -> PairedDataset:
    if "dataset_file" in cfg:
        return PairedDataset.load(_require_file(cfg["dataset_file"]))
    return synth_generate(SynthConfig(**cfg.get("dataset", {})), seed)


def train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(seed=seed, **cfg.get("train", {}))


def read_point_cloud(path) -> WeightedPointCloud:
    """CSV with a header row; a ``weight`` column is optional (uniform otherwise).

    Weights must be nonnegative and are normalised to sum to one.
    """
    path = _require_file(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise errors.FormatError(f"{path}: need a header and at least one point")
    header = [h.strip().lower() for h in rows[0]]
    wcol = header.index("weight") if "weight" in header else None
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise errors.FormatError(f"{path}: {exc}") from exc
    if body.ndim != 2 or body.shape[1] != len(header):
        raise errors.FormatError(f"{path}: ragged rows")
    keep = [j for j in range(len(header)) if j != wcol]
    if not keep:
        raise errors.FormatError(f"{path}: no coordinate columns")
    points = body[:, keep]
    if wcol is None:
        return WeightedPointCloud.uniform(points)
    w = body[:, wcol]
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise errors.ParameterError(f"{path}: weights must be nonnegative with a positive sum")
    return WeightedPointCloud(points, w / w.sum())


# ---------------------------------------------------------------------------
# commands


def cmd_generate_data(cfg: dict, seed: int, out: Path) -> dict:
    ds = synth_generate(SynthConfig(**cfg.get("dataset", {})), seed)
    ds.save(out / "dataset.bin")
    return {"dataset": str(out / "dataset.bin"), "samples": len(ds),
            "mismatch_fraction": float(ds.mismatch.mean())}


def cmd_train(cfg: dict, seed: int, out: Path) -> dict:
    ds = _dataset_for(cfg, seed)
    tcfg = train_config(cfg, seed)
    params, history = train_alignment(ds, tcfg)
    save_checkpoint(out / "checkpoint.bin", params)
    if "dataset_file" not in cfg:
        ds.save(out / "dataset.bin")
    doc = {
        "version": DOC_VERSION,
        "seed": seed,
        "dataset": asdict(ds.config),
        "dataset_seed": ds.seed,
        "train": tcfg.to_dict(),
        "history": history.to_dict(),
    }
    _write_json(out / "history.json", doc)
    return {"checkpoint": str(out / "checkpoint.bin"), "history": str(out / "history.json"),
            "epochs": tcfg.epochs}


def _population_sections(params, ds: PairedDataset, k: int) -> dict:
    audio = [encode(params, r) for r in ds.raw_a]
    pooled = gap_report(np.vstack([mean_pool(t) for t in audio]),
                        np.vstack([mean_pool(t) for t in ds.tokens_b]), k)
    tokens = gap_report(np.vstack(audio), ds.tokens_b.reshape(-1, ds.config.d), k)
    return {"pooled": pooled, "tokens": tokens}


def cmd_diagnose(cfg: dict, checkpoint, dataset, out: Path) -> dict:
    section = cfg.get("diagnose", {})
    checkpoint = checkpoint or section.get("checkpoint")
    dataset = dataset or section.get("dataset")
    if checkpoint is None or dataset is None:
        raise errors.ConfigError("diagnose needs a checkpoint and a dataset")
    params = load_checkpoint(_require_file(checkpoint))
    ds = PairedDataset.load(_require_file(dataset))
    k = int(section.get("k", 5))
    reports = _population_sections(params, ds, k)
    doc = {"version": DOC_VERSION, "k": k,
           "pooled": reports["pooled"].to_dict(), "tokens": reports["tokens"].to_dict()}
    _write_json(out / "report.json", doc)
    write_pca_csv(out / "pca.csv", reports["pooled"])
    return {"report": str(out / "report.json"), "pca": str(out / "pca.csv"),
            "normalized_centroid_distance": doc["pooled"]["normalized_centroid_distance"]}


def cmd_filter(cfg: dict, table_path, keep_n, metric, out: Path) -> dict:
    section = cfg.get("filter", {})
    table_path = table_path or section.get("table")
    keep_n = keep_n if keep_n is not None else section.get("keep_n")
    metric = metric or section.get("metric", "cosine")
    if table_path is None or keep_n is None:
        raise errors.ConfigError("filter needs a table and keep_n")
    table = EmbeddingTable.load(_require_file(table_path))
    if not 0 <= keep_n <= len(table):
        raise errors.ParameterError(f"keep_n must lie in [0, {len(table)}], got {keep_n}")
    ranking = rank_pairs(table, metric)
    doc = {
        "version": DOC_VERSION,
        "metric": metric,
        "keep_n": keep_n,
        "kept": [r.id for r in ranking[:keep_n]],
        "ranking": [{"id": r.id, "distance": None if math.isinf(r.distance) else r.distance,
                     "error": r.error} for r in ranking],
    }
    _write_json(out / "kept.json", doc)
    return {"kept": str(out / "kept.json"), "count": keep_n}


def cmd_emd(x_path, y_path) -> float:
    return emd_exact(read_point_cloud(x_path), read_point_cloud(y_path)).total_cost


def cmd_mmd(cfg: dict, x_path, y_path, K=None) -> float:
    section = cfg.get("mmd", {})
    x = read_point_cloud(x_path).points
    y = read_point_cloud(y_path).points
    if "bandwidths" in section:
        spec = KernelMixtureSpec(tuple(section["bandwidths"]))
    else:
        spec = bandwidths_from_data(x, y, K if K is not None else section.get("K", DEFAULT_K))
    return mmd_squared(x, y, spec).mmd_squared


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default=".", help="output directory")

    p = argparse.ArgumentParser(prog="tokenalign", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="write a synthetic paired dataset")
    sub.add_parser("train", parents=[common], help="train the trainable encoder")
    d = sub.add_parser("diagnose", parents=[common], help="modality-gap report for a checkpoint")
    d.add_argument("--checkpoint")
    d.add_argument("--dataset")
    f = sub.add_parser("filter", parents=[common], help="rank and keep the closest embedding pairs")
    f.add_argument("table", nargs="?")
    f.add_argument("--keep-n", type=int)
    f.add_argument("--metric", choices=["cosine", "l2"])
    for name in ("emd", "mmd"):
        s = sub.add_parser(name, parents=[common], help=f"{name.upper()} between two point-cloud CSVs")
        s.add_argument("x")
        s.add_argument("y")
        if name == "mmd":
            s.add_argument("--K", type=int)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise errors.ConfigError("--seed must be an unsigned 64-bit integer")
    cfg = load_config(args.config)
    seed = _seed(cfg, args.seed)
    if args.command in ("emd", "mmd"):
        value = cmd_emd(args.x, args.y) if args.command == "emd" else cmd_mmd(cfg, args.x, args.y, args.K)
        print(repr(float(value)))
        return 0
    out = _out_dir(args.out)
    if args.command == "generate-data":
        summary = cmd_generate_data(cfg, seed, out)
    elif args.command == "train":
        summary = cmd_train(cfg, seed, out)
    elif args.command == "diagnose":
        summary = cmd_diagnose(cfg, args.checkpoint, args.dataset, out)
    else:
        summary = cmd_filter(cfg, args.table, args.keep_n, args.metric, out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except errors.AlignError as exc:
        err = exc
    except OSError as exc:
        err = IOFailure(str(exc))
    code = EXIT_CODES.get(err.kind, 1)
    msg = {"error": err.kind, "exit_code": code, "message": str(err)}
    for attr in ("epoch", "batch", "iterations"):
        if getattr(err, attr, None) is not None:
            msg[attr] = getattr(err, attr)
    sys.stderr.write(json.dumps(msg, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
