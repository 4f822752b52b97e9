"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .backbone import BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import CorruptionConfig, NegativeConfig
from .errors import DataError, IoError, RegimeMismatch
from .graph import build_graph
from .relational import load_database, load_schema, temporal_prune, validate_integrity
from .sampler import HgSamplerConfig, NeighborSamplerConfig, hg_sample, pick_seed_type
from .synth import SynthConfig, gen_synth_db
from .training import (
    REGIMES,
    FinetuneConfig,
    PretrainConfig,
    finetune,
    load_task_table,
    pretrain,
    run_from_checkpoint,
)

log = logging.getLogger("relcontrast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- helpers --------------------------------------------------------------

def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON config ({exc})") from None


def _only(cls, d: dict | None, section: str) -> dict:
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise UsageError(f"unknown {section} option(s): {', '.join(sorted(extra))}")
    return d


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _data_digests(data: Path) -> dict[str, str]:
    return {p.name: _file_digest(p) for p in sorted(data.iterdir()) if p.suffix in (".csv", ".json")}


def _load_db(data: Path):
    if data is None:
        raise UsageError("--data is required")
    return load_database(load_schema(data / "schema.json"), data)


def _tasks_meta(data: Path) -> dict:
    path = data / "tasks.json"
    return _read_json(path) if path.exists() else {"tasks": {}}


def _write_manifest(out: Path, args, resolved: dict, artifacts: dict, data: Path | None):
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": resolved,
        "seed": args.seed,
        "artifacts": artifacts,
        "versions": {
            "relcontrast": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "inputs": _data_digests(data) if data else {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _pretrain_config(doc: dict, args, schema) -> PretrainConfig:
    d = _only(PretrainConfig, doc.get("pretrain"), "pretrain")
    if args.max_steps is not None:
        d["max_steps"] = args.max_steps
    d["seed"] = args.seed
    smp = d.pop("sampler", None) or {}
    smp.setdefault("seed_type", pick_seed_type(schema))
    smp["rng_seed"] = args.seed
    d["sampler"] = HgSamplerConfig(**_only(HgSamplerConfig, smp, "sampler"))
    d["corruption"] = CorruptionConfig(**_only(CorruptionConfig, d.get("corruption"), "corruption"))
    d["negatives"] = NegativeConfig(**_only(NegativeConfig, d.get("negatives"), "negatives"))
    return PretrainConfig(**d)


def _finetune_config(doc: dict, args, bcfg: BackboneConfig) -> FinetuneConfig:
    d = _only(FinetuneConfig, doc.get("finetune"), "finetune")
    if args.max_steps is not None:
        d["max_steps"] = args.max_steps
    if getattr(args, "regime", None):
        d["regime"] = args.regime
    d["seed"] = args.seed
    smp = d.pop("sampler", None) or {}
    smp.setdefault("depth", bcfg.num_layers)
    smp["rng_seed"] = args.seed
    d["sampler"] = NeighborSamplerConfig(**_only(NeighborSamplerConfig, smp, "sampler"))
    return FinetuneConfig(**d)


def _task(data: Path, name: str | None):
    meta = _tasks_meta(data)["tasks"]
    if not name:
        raise UsageError("--task is required")
    if name not in meta:
        raise UsageError(f"unknown task {name!r}; available: {', '.join(sorted(meta)) or 'none'}")
    m = meta[name]
    return load_task_table(data / m["file"], name, m["entity_table"], m["label_kind"])


# --- subcommands ----------------------------------------------------------

def cmd_validate(args, doc) -> int:
    if args.data is None:
        raise UsageError("--data is required")
    db = load_database(load_schema(args.data / "schema.json"), args.data, check=False)
    report = validate_integrity(db)
    for line in report.lines():
        print(line)
    if report.is_clean:
        print(f"ok: {len(db.schema.tables)} tables, {db.num_rows()} rows")
        return 0
    return 2


def cmd_gen_synth(args, doc) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    d = _only(SynthConfig, doc.get("synth", doc), "synth")
    d["rng_seed"] = args.seed
    cfg = SynthConfig(**d)
    gen_synth_db(cfg, args.out)
    print(f"wrote synthetic database to {args.out}")
    return 0


def cmd_pretrain(args, doc) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    db = _load_db(args.data)
    cutoff = args.cutoff
    if cutoff is None:
        cutoff = _tasks_meta(args.data).get("split_times", {}).get("train")
    if cutoff is not None:
        db = temporal_prune(db, int(cutoff))
    bcfg = BackboneConfig(**_only(BackboneConfig, doc.get("backbone"), "backbone"))
    cfg = _pretrain_config(doc, args, db.schema)
    args.out.mkdir(parents=True, exist_ok=True)
    res = pretrain(db, bcfg, cfg, metrics_path=args.out / "metrics.jsonl")
    res.checkpoint.manifest["pretrain_cutoff"] = cutoff
    save_checkpoint(res.checkpoint, args.out / "checkpoint.rcc")
    resolved = {"backbone": bcfg.to_dict(), "pretrain": res.checkpoint.manifest["pretrain_config"],
                "cutoff": cutoff}
    _write_manifest(args.out, args, resolved, {
        "checkpoint": "checkpoint.rcc", "metrics": "metrics.jsonl", "timings": "metrics.timings.jsonl",
    }, args.data)
    print(json.dumps({"initial_val_loss": res.initial_val, "best_val_loss": res.best_val,
                      "best_step": res.best_step, "steps": res.steps_run, "stopped": res.stopped}))
    return 0


def cmd_finetune(args, doc) -> int:
    if args.out is None:
        raise UsageError("--out is required")
    regime = args.regime or (doc.get("finetune") or {}).get("regime", "baseline")
    if regime != "baseline" and args.checkpoint is None:
        raise RegimeMismatch(f"regime {regime!r} needs --checkpoint")
    if regime == "baseline" and args.checkpoint is not None:
        raise RegimeMismatch("regime 'baseline' trains from scratch; drop --checkpoint")
    db = _load_db(args.data)
    task = _task(args.data, args.task)
    init = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if "backbone" in doc:
        bcfg = BackboneConfig(**_only(BackboneConfig, doc["backbone"], "backbone"))
    elif init is not None:
        bcfg = BackboneConfig(**init.manifest["backbone_config"])
    else:
        bcfg = BackboneConfig()
    args.regime = regime
    cfg = _finetune_config(doc, args, bcfg)
    args.out.mkdir(parents=True, exist_ok=True)
    res = finetune(db, task, init, bcfg, cfg, metrics_path=args.out / "metrics.jsonl")
    save_checkpoint(res.checkpoint, args.out / "checkpoint.rcc")
    fc = asdict(cfg)
    _write_manifest(args.out, args, {"backbone": bcfg.to_dict(), "finetune": fc, "task": task.name,
                                     "init_checkpoint": str(args.checkpoint) if args.checkpoint else None},
                    {"checkpoint": "checkpoint.rcc", "metrics": "metrics.jsonl",
                     "timings": "metrics.timings.jsonl"}, args.data)
    key = "val_auc_roc" if task.label_kind == "binary" else "val_mae"
    print(json.dumps({key: res.best_metric, "best_step": res.best_step, "steps": res.steps_run}))
    return 0


def cmd_evaluate(args, doc) -> int:
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    db = _load_db(args.data)
    task = _task(args.data, args.task)
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _finetune_config(doc, args, BackboneConfig(**ckpt.manifest["backbone_config"]))
    run = run_from_checkpoint(db, task, ckpt, cfg)
    key = "auc_roc" if task.label_kind == "binary" else "mae"
    print(json.dumps({"task": task.name, "split": args.split, key: run.metric(args.split)}))
    return 0


def cmd_inspect_sample(args, doc) -> int:
    db = _load_db(args.data)
    g = build_graph(db)
    smp = dict((doc.get("pretrain") or {}).get("sampler") or {})
    smp.setdefault("seed_type", pick_seed_type(db.schema))
    smp["rng_seed"] = args.seed
    sg = hg_sample(g, HgSamplerConfig(**_only(HgSamplerConfig, smp, "sampler")))
    print(json.dumps(sg.census(), indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "inspect-sample": cmd_inspect_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--data", type=Path, help="directory with schema.json and one CSV per table")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", type=Path, help="JSON config; command-line flags take precedence")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="relcontrast", description="Contrastive pretraining for relational databases.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check keys and references")
    sub.add_parser("gen-synth", parents=[common], help="write a seeded synthetic database")
    pt = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining")
    pt.add_argument("--max-steps", type=int)
    pt.add_argument("--cutoff", type=int, help="prune rows newer than this unix time (default: train split time)")
    ft = sub.add_parser("finetune", parents=[common], help="train a task head")
    ft.add_argument("--max-steps", type=int)
    ft.add_argument("--regime", choices=REGIMES)
    ft.add_argument("--task")
    ft.add_argument("--checkpoint", type=Path)
    ev = sub.add_parser("evaluate", parents=[common], help="score a fine-tuned checkpoint")
    ev.add_argument("--task")
    ev.add_argument("--checkpoint", type=Path)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.set_defaults(max_steps=None, regime=None)
    sub.add_parser("inspect-sample", parents=[common], help="per-type census of one pretraining subgraph")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        doc = _read_json(args.config) if args.config else {}
        return COMMANDS[args.command](args, doc)
    except (UsageError, RegimeMismatch) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
