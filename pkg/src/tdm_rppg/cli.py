"""Command-line entry point: ``tdm-rppg {synth,train,eval,gradcheck,count,ablate}``.

Every command takes an optional JSON ``--config`` (unknown keys are rejected),
and flags override file values. Outputs go only under ``--out``, next to a
``run_manifest.json`` recording the resolved config, its hash and the seed.
Failures print one ``error: <Kind>: <message>`` line on stderr and exit
non-zero (2 for bad configuration, 1 otherwise).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import gradcheck as gc
from . import tensor as tn
from .data_io import DatasetIndex, Record, load_index
from .model import Architecture, count_macs, count_params, mac_breakdown
from .synth import SynthSubjectSpec, generate_cohort, read_cohort, write_cohort
from .train import (ablate, evaluate, load_checkpoint, predict_clips, table_to_csv, train,
                    TrainConfig, write_training_outputs)


class ConfigError(ValueError):
    pass


# -- config handling -------------------------------------------------------------

def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err.msg} at line {err.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _resolve(doc: dict, defaults: dict, what: str) -> dict:
    unknown = set(doc) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {what} config keys: {sorted(unknown)}")
    return {**defaults, **doc}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: dict, args) -> None:
    manifest = {"command": command, "config": cfg, "config_hash": config_hash(cfg),
                "seed": args.seed, "precision": args.precision, "threads": args.threads,
                "version": __version__, "numpy": np.__version__, "python": platform.python_version()}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _out_dir(args, required: bool = True) -> Path | None:
    if args.out is None:
        if required:
            raise ConfigError(f"{args.command} needs --out")
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_fields() -> dict:
    return {f.name: f.default for f in fields(TrainConfig)}


def _train_config(cfg: dict, args) -> TrainConfig:
    tc = {k: cfg[k] for k in _train_fields() if k in cfg}
    if args.seed is not None:
        tc["seed"] = args.seed
    if args.precision is not None:
        tc["precision"] = args.precision
    if tc.get("loss", "mse") != "talos":
        tc["sgd_lr"] = None
    try:
        return TrainConfig.from_dict(tc)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


# -- data ------------------------------------------------------------------------

def load_dataset(path, subjects=None, split=None, threads: int = 1) -> list[Record]:
    """Records from a synthetic ``manifest.json`` or a dataset index JSON."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if "samples" in doc:
        records = read_cohort(path)
        if split is not None:
            raise ConfigError("a synthetic manifest has no splits; select with subjects")
    elif "entries" in doc:
        records = load_index(DatasetIndex.load(path), root=path.parent, split=split, max_workers=threads)
    else:
        raise ConfigError(f"{path}: neither a synthetic manifest nor a dataset index")
    if subjects is not None:
        keep = set(subjects)
        records = [r for r in records if r.subject_id in keep]
    if not records:
        raise ConfigError(f"{path}: no records selected")
    return records


# -- commands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    template_keys = {f.name: f.default for f in fields(SynthSubjectSpec) if f.name
                     not in ("subject_id", "true_offset", "hr_trajectory", "seed")}
    defaults = {"n_subjects": 5, "videos_per_subject": 2, "n_frames": 512, "height": 16, "width": 16,
                "fps": 30.0, "offsets": None, "max_offset": None, "hr_range": [60.0, 110.0],
                "constant_hr": False, "withhold_offsets": False, "template": {}}
    cfg = _resolve(_read_config(args.config), defaults, "synth")
    tmpl = _resolve(cfg["template"], {k: (list(v) if isinstance(v, tuple) else v) for k, v in template_keys.items()},
                    "synth template")
    cfg["template"] = tmpl
    cfg["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_dir(args)
    template = SynthSubjectSpec(subject_id="template", **{k: tuple(v) if isinstance(v, list) else v
                                                          for k, v in tmpl.items()})
    samples = generate_cohort(cfg["n_subjects"], cfg["videos_per_subject"], template, cfg["n_frames"],
                              cfg["height"], cfg["width"], cfg["fps"], cfg["seed"], cfg["offsets"],
                              cfg["max_offset"], tuple(cfg["hr_range"]), cfg["constant_hr"])
    manifest = write_cohort(samples, out, cfg["withhold_offsets"])
    _write_manifest(out, "synth", cfg, args)
    print(f"wrote {len(samples)} videos to {manifest}")
    return 0


def cmd_train(args) -> int:
    defaults = {"data": None, "subjects": None, "split": None, **_train_fields()}
    cfg = _resolve(_read_config(args.config), defaults, "train")
    if cfg["data"] is None:
        raise ConfigError("train config needs 'data' (manifest or index path)")
    tcfg = _train_config(cfg, args)
    out = _out_dir(args)
    records = load_dataset(cfg["data"], cfg["subjects"], cfg["split"], args.threads)
    result = train(tcfg, records, on_epoch=lambda e: print(json.dumps(e), flush=True) if args.verbose else None)
    write_training_outputs(result, out)
    resolved = {"data": cfg["data"], "subjects": cfg["subjects"], "split": cfg["split"], **asdict(tcfg)}
    _write_manifest(out, "train", resolved, args)
    final = result.log[-1]["loss"] if result.log else None
    print(json.dumps({"epochs": tcfg.epochs, "final_loss": final, "checkpoint": str(out / "checkpoint.tdmc")}))
    return 0


def cmd_eval(args) -> int:
    defaults = {"checkpoint": None, "data": None, "subjects": None, "split": None,
                "protocol": "sequence", "video_hr": "concat", "clip_length": 256, "dump_signals": False}
    cfg = _resolve(_read_config(args.config), defaults, "eval")
    if cfg["checkpoint"] is None or cfg["data"] is None:
        raise ConfigError("eval config needs 'checkpoint' and 'data'")
    out = _out_dir(args)
    model, _, _ = load_checkpoint(cfg["checkpoint"])
    records = load_dataset(cfg["data"], cfg["subjects"], cfg["split"], args.threads)
    report = evaluate(model, records, cfg["protocol"], cfg["video_hr"], cfg["clip_length"])
    report.save(out, stem=f"eval_{cfg['protocol']}")
    if cfg["dump_signals"]:
        _dump_signals(out / "signals.csv", model, records, cfg["clip_length"])
    _write_manifest(out, "eval", cfg, args)
    print(json.dumps(report.summary()))
    return 0


def _dump_signals(path: Path, model, records, length: int) -> None:
    with open(path, "w") as fh:
        fh.write("video_id,clip,frame,time_seconds,prediction,groundtruth\n")
        for rec, clips, preds in predict_clips(model, records, length):
            for c, p in zip(clips, preds):
                for i, (a, b) in enumerate(zip(p, c.ppg)):
                    f = c.start + i
                    fh.write(f"{rec.video_id},{c.index},{f},{f / c.fps:.6f},{a:.9g},{b:.9g}\n")


def cmd_gradcheck(args) -> int:
    defaults = {"seeds": 1, "model": True, "model_c1": 16, "model_c2": 32, "model_order": 2}
    cfg = _resolve(_read_config(args.config), defaults, "gradcheck")
    if args.precision == "f32":
        raise ConfigError("gradcheck runs in 64-bit only")
    base = args.seed if args.seed is not None else 0
    seeds = list(range(base, base + int(cfg["seeds"])))
    arch = Architecture(cfg["model_c1"], cfg["model_c2"], cfg["model_order"], 8, 8)
    results = gc.run_all(seeds, include_model=cfg["model"], model_arch=arch)
    failed = [r for r in results if not r.passed]
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_error)
    for name, err in worst.items():
        print(f"{name}\tmax_rel_error={err:.3e}\t{'pass' if err < gc.RTOL else 'FAIL'}")
    out = _out_dir(args, required=False)
    if out is not None:
        (out / "gradcheck.json").write_text(json.dumps([r.to_dict() for r in results], indent=2))
        _write_manifest(out, "gradcheck", {**cfg, "seeds": seeds}, args)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_count(args) -> int:
    defaults = {"c1": 16, "c2": 32, "order": 2, "frames": 256, "height": 128, "width": 128}
    cfg = _resolve(_read_config(args.config), defaults, "count")
    arch = Architecture(cfg["c1"], cfg["c2"], cfg["order"], cfg["height"], cfg["width"])
    params = count_params(arch)
    macs = count_macs(arch, cfg["frames"], cfg["height"], cfg["width"])
    print(f"params={params}")
    print(f"macs={macs}")
    out = _out_dir(args, required=False)
    if out is not None:
        doc = {"params": params, "macs": macs,
               "mac_breakdown": mac_breakdown(arch, cfg["frames"], cfg["height"], cfg["width"])}
        (out / "count.json").write_text(json.dumps(doc, indent=2))
        _write_manifest(out, "count", cfg, args)
    return 0


def cmd_ablate(args) -> int:
    defaults = {"data": None, "train_subjects": None, "test_subjects": None, "train_split": None,
                "test_split": None, "orders": [0, 1, 2], "losses": ["mse", "npc", "mcc", "talos"],
                **_train_fields()}
    cfg = _resolve(_read_config(args.config), defaults, "ablate")
    if cfg["data"] is None:
        raise ConfigError("ablate config needs 'data'")
    out = _out_dir(args)
    base = _train_config({k: v for k, v in cfg.items() if k != "loss"}, args)
    train_recs = load_dataset(cfg["data"], cfg["train_subjects"], cfg["train_split"], args.threads)
    test_recs = load_dataset(cfg["data"], cfg["test_subjects"], cfg["test_split"], args.threads)
    rows = ablate(train_recs, test_recs, base, cfg["orders"], cfg["losses"])
    (out / "ablation.csv").write_text(table_to_csv(rows))
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    _write_manifest(out, "ablate", {**cfg, "seed": base.seed, "precision": base.precision}, args)
    print(table_to_csv(rows), end="")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "count": cmd_count, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="BLAS and loader threads")
    common.add_argument("--out", help="output directory; nothing is written elsewhere")
    common.add_argument("--precision", choices=sorted(tn.DTYPES), help="floating-point precision")
    common.add_argument("-v", "--verbose", action="store_true", help="print per-epoch progress")
    parser = argparse.ArgumentParser(prog="tdm-rppg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: ConfigError: --threads must be >= 1", file=sys.stderr)
        return 2
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (ConfigError, json.JSONDecodeError, FileNotFoundError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # one-line diagnostic instead of a traceback
        msg = str(err).replace("\n", " ")
        print(f"error: {type(err).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
