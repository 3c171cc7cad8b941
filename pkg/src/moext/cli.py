"""``moext`` command line: synth, preprocess, pretrain, finetune, evaluate, flow.

Each subcommand reads an optional INI config (``--config``); flags win over the
file. Every output directory receives ``config_hash.txt`` and the effective
``run_config.ini``; JSON and checkpoint outputs embed the hash as well.
Failures print one JSON error line on stderr and exit with a code specific to
the error type.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_run_config
from .errors import MoExtError

log = logging.getLogger("moext")

ABLATIONS = {
    "pretraining": "use_pretrained",
    "macro": "use_macro_data",
    "motion": "use_motion_extractor",
    "st": "use_st_loss",
    "ss": "use_ss_loss",
}


def _abs(paths):
    if paths is None:
        return None
    if isinstance(paths, (list, tuple)):
        return [str(Path(p).resolve()) for p in paths]
    return str(Path(paths).resolve())


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--config", help="INI run configuration")
    g.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    g.add_argument("--out", help="output directory (overrides [run] out)")
    g.add_argument("--jobs", type=int, help="parallel workers (overrides [run] jobs)")
    g.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="single-threaded deterministic kernels (default from [run] deterministic)")
    g.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _train_flags(p: argparse.ArgumentParser, phase: str) -> None:
    p.add_argument("--epochs", type=int, help=f"overrides [{phase}] epochs")
    p.add_argument("--batch-size", type=int, help=f"overrides [{phase}] batch_size")
    p.add_argument("--learning-rate", type=float, help=f"overrides [{phase}] learning_rate")
    p.add_argument("--no-augment", action="store_true", help=f"set [{phase}] augment = false")
    p.add_argument("--width", type=float, help="overrides [model] width")
    p.add_argument("--input-downsample", type=int, help="overrides [model] input_downsample")
    p.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), default=[],
                   help="disable a component (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moext", description="Micro-expression recognition pipeline.")
    parser.add_argument("--version", action="version", version=f"moext {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic cartoon-face dataset")
    _common(p)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--clips", type=int, required=True, help="micro clips per subject")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--macro-clips", type=int, default=0, help="macro clips per subject")
    p.add_argument("--motion-scale", type=float, default=1.0)
    p.add_argument("--dataset-id", default="SYNTH")

    p = sub.add_parser("preprocess", help="align and crop frames to 224x224")
    _common(p)
    p.add_argument("--manifest", action="append", required=True, help="raw manifest CSV (repeatable)")
    p.add_argument("--landmarks", help="landmarks.json (frame path -> 5 points); detector used otherwise")

    p = sub.add_parser("pretrain", help="self-supervised pre-training")
    _common(p)
    _train_flags(p, "pretrain")
    p.add_argument("--manifest", action="append", help="processed manifest CSV (repeatable)")

    p = sub.add_parser("finetune", help="fine-tune the classifier")
    _common(p)
    _train_flags(p, "finetune")
    p.add_argument("--manifest", help="processed micro-expression manifest CSV")
    p.add_argument("--pretrain-checkpoint", help="pre-training checkpoint archive")

    p = sub.add_parser("evaluate", help="LOSO evaluation under a protocol")
    _common(p)
    _train_flags(p, "finetune")
    p.add_argument("--protocol", help="SDE_CASME2_5, SDE_SAMM_5, SDE_CASME3_3, CDE_3 or SDE_SYNTH")
    p.add_argument("--manifest", action="append", help="processed manifest CSV (repeatable)")
    p.add_argument("--pretrain-manifest", action="append", help="manifest used for pre-training (repeatable)")
    p.add_argument("--pretrain-checkpoint", help="reuse a pre-training checkpoint for every fold")
    p.add_argument("--pretrain-epochs", type=int, help="overrides [pretrain] epochs")
    p.add_argument("--exclude-test-subjects-from-pretrain", action="store_true", default=None,
                   help="pre-train once per fold without the held-out subject")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("flow", help="dense optical-flow statistics for a frame sequence")
    _common(p)
    p.add_argument("--frames-dir", required=True, help="directory of numbered frames")
    p.add_argument("--reference-idx", type=int, default=0)
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    cfg.override("run", "seed", args.seed)
    cfg.override("run", "out", _abs(args.out))
    cfg.override("run", "jobs", args.jobs)
    cfg.override("run", "deterministic", args.deterministic)
    phase = "pretrain" if args.command == "pretrain" else "finetune"
    if hasattr(args, "epochs"):
        cfg.override(phase, "epochs", args.epochs)
        cfg.override(phase, "batch_size", args.batch_size)
        cfg.override(phase, "learning_rate", args.learning_rate)
        if args.no_augment:
            cfg.set(phase, "augment", False)
        cfg.override("model", "width", args.width)
        cfg.override("model", "input_downsample", args.input_downsample)
        for name in args.ablate:
            cfg.set("ablation", ABLATIONS[name], False)
    if args.command == "evaluate":
        cfg.override("pretrain", "epochs", args.pretrain_epochs)
        cfg.override("protocol", "name", args.protocol)
        cfg.override("protocol", "exclude_test_subjects_from_pretrain", args.exclude_test_subjects_from_pretrain)
        cfg.override("paths", "pretrain_manifests", _abs(args.pretrain_manifest))
    if args.command in ("evaluate", "pretrain", "preprocess"):
        cfg.override("paths", "manifests", _abs(args.manifest))
    if args.command == "finetune" and args.manifest:
        cfg.set("paths", "manifests", [_abs(args.manifest)])
    if args.command in ("evaluate", "finetune"):
        cfg.override("paths", "pretrain_checkpoint", _abs(args.pretrain_checkpoint))
    if args.command == "preprocess":
        cfg.override("paths", "landmarks", _abs(args.landmarks))
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.resolve_path(cfg.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(out: Path, cfg: RunConfig, config_hash: str) -> None:
    (out / "config_hash.txt").write_text(config_hash + "\n")
    (out / "run_config.ini").write_text(cfg.to_ini())


def _manifests(cfg: RunConfig, key: str = "manifests"):
    from .data.manifest import load_manifest

    return [load_manifest(cfg.resolve_path(p)) for p in cfg.get("paths", key)]


def _runtime(cfg: RunConfig) -> None:
    from .training import configure_runtime

    configure_runtime(cfg.get("run", "deterministic"), cfg.get("run", "jobs"))


def cmd_synth(args, cfg: RunConfig, config_hash: str) -> int:
    from .data.synthetic import generate_synthetic_dataset

    out = _out_dir(cfg)
    man = generate_synthetic_dataset(out, args.subjects, args.clips, args.classes, seed=cfg.get("run", "seed"),
                                     macro_clips_per_subject=args.macro_clips, motion_scale=args.motion_scale,
                                     dataset_id=args.dataset_id)
    _stamp(out, cfg, config_hash)
    print(f"wrote {len(man)} clips to {out / 'manifest.csv'}")
    return 0


def cmd_preprocess(args, cfg: RunConfig, config_hash: str) -> int:
    from .data.preprocess import load_landmark_file, preprocess_manifest

    out = _out_dir(cfg)
    lm_path = cfg.get("paths", "landmarks")
    landmarks = load_landmark_file(cfg.resolve_path(lm_path)) if lm_path else None
    summary = {}
    for path, man in zip(cfg.get("paths", "manifests"), _manifests(cfg)):
        name = Path(path).name
        result, report = preprocess_manifest(man, out, landmarks, manifest_name=name)
        summary[name] = report.as_dict()
        print(f"{name}: {report.processed} clips aligned, {len(report.skipped)} skipped")
    with (out / "preprocess_report.json").open("w") as fh:
        json.dump({"config_hash": config_hash, "manifests": summary}, fh, indent=1, sort_keys=True)
    _stamp(out, cfg, config_hash)
    return 0


def cmd_pretrain(args, cfg: RunConfig, config_hash: str) -> int:
    from .checkpoint import save_checkpoint
    from .training import PRETRAIN_COLUMNS, pretrain, write_history_csv

    _runtime(cfg)
    out = _out_dir(cfg)
    ckpt = pretrain(cfg.train_config("pretrain"), _manifests(cfg))
    ckpt.extra["config_hash"] = config_hash
    save_checkpoint(ckpt, out / "pretrain.ckpt")
    write_history_csv(ckpt.history, out / "pretrain_history.csv", PRETRAIN_COLUMNS)
    _stamp(out, cfg, config_hash)
    last = ckpt.history[-1]
    print(f"pretrain: {ckpt.epoch} epochs, final l_re={last['l_re']:.4f} total={last['total']:.4f}")
    return 0


def _pretrained(cfg: RunConfig):
    from .checkpoint import load_checkpoint

    p = cfg.get("paths", "pretrain_checkpoint")
    return load_checkpoint(cfg.resolve_path(p)) if p else None


def cmd_finetune(args, cfg: RunConfig, config_hash: str) -> int:
    from .checkpoint import save_checkpoint
    from .errors import ConfigError
    from .training import FINETUNE_COLUMNS, finetune, write_history_csv

    _runtime(cfg)
    mans = _manifests(cfg)
    if len(mans) != 1:
        raise ConfigError("finetune needs exactly one manifest")
    out = _out_dir(cfg)
    tc = cfg.train_config("finetune")
    ckpt = finetune(tc, _pretrained(cfg) if tc.ablation.use_pretrained else None, mans[0])
    ckpt.extra["config_hash"] = config_hash
    save_checkpoint(ckpt, out / "finetune.ckpt")
    write_history_csv(ckpt.history, out / "finetune_history.csv", FINETUNE_COLUMNS)
    _stamp(out, cfg, config_hash)
    print(f"finetune: final train_acc={ckpt.history[-1]['train_acc']:.4f}")
    return 0


def cmd_evaluate(args, cfg: RunConfig, config_hash: str) -> int:
    from .evaluation.protocols import ProtocolSettings, run_protocol
    from .evaluation.report import write_report

    _runtime(cfg)
    settings = ProtocolSettings(
        pretrain=cfg.train_config("pretrain"),
        finetune=cfg.train_config("finetune"),
        exclude_test_subjects_from_pretrain=cfg.get("protocol", "exclude_test_subjects_from_pretrain"),
        schema_overrides=dict(cfg.values["schemas"]),
        jobs=cfg.get("run", "jobs"),
    )
    report = run_protocol(cfg.get("protocol", "name"), settings, _manifests(cfg),
                          pretrain_manifests=_manifests(cfg, "pretrain_manifests"),
                          pretrain_checkpoint=_pretrained(cfg), config_hash=config_hash)
    out = _out_dir(cfg)
    write_report(report, out, plots=not args.no_plots)
    _stamp(out, cfg, config_hash)
    agg = report["aggregate"]
    print(f"{report['protocol']}: UF1={agg['uf1']:.4f} UAR={agg['uar']:.4f} ACC={agg['acc']:.4f} "
          f"n={agg['n_samples']}")
    return 0


def cmd_flow(args, cfg: RunConfig, config_hash: str) -> int:
    from .data.manifest import list_frames
    from .data.preprocess import load_rgb
    from .errors import MissingFileError
    from .flow import flow_stats, plot_flow, write_flow_csv

    frames_dir = Path(args.frames_dir)
    if not frames_dir.is_dir():
        raise MissingFileError(f"frames directory not found: {frames_dir}")
    paths = list_frames(frames_dir)
    if len(paths) < 2:
        raise MissingFileError(f"need at least 2 frames in {frames_dir}")
    rows = flow_stats([load_rgb(p) for p in paths], reference_idx=args.reference_idx)
    out = _out_dir(cfg)
    write_flow_csv(rows, out / "flow.csv")
    plot_flow(rows, out / "flow.png", title=frames_dir.name)
    _stamp(out, cfg, config_hash)
    peak = max(rows, key=lambda r: r["mean_magnitude"])
    print(f"flow: {len(rows)} frames, peak mean magnitude {peak['mean_magnitude']:.3f} at frame {peak['frame_idx']}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "flow": cmd_flow,
}
_SKIP_HASH = {"command", "config", "seed", "out", "jobs", "deterministic", "log_level", "epochs", "batch_size",
              "learning_rate", "no_augment", "width", "input_downsample", "ablate", "manifest", "pretrain_manifest",
              "pretrain_checkpoint", "pretrain_epochs", "protocol", "exclude_test_subjects_from_pretrain",
              "landmarks"}


def _error(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        # Flags already folded into the config are hashed there; the rest are command-specific inputs.
        extra = {"command": args.command, **{k: v for k, v in vars(args).items() if k not in _SKIP_HASH}}
        return COMMANDS[args.command](args, cfg, cfg.config_hash(extra))
    except MoExtError as exc:
        return _error(exc, exc.exit_code)
    except (ValueError, OSError) as exc:
        return _error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
