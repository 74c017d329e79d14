"""``spgan-kit`` command-line entry point.

Every command reads the same sectioned config, applies command-line
overrides (flags beat the file, the file beats built-in defaults), writes
``resolved_config.cfg`` into the run directory, and only then does any work.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, write_resolved_config

log = logging.getLogger("spgan_kit")


def _manifest(cfg: RunConfig, key: str, tag: str):
    from .dataset import load_manifest

    return load_manifest(cfg.data_path(key), cfg.data.naming_convention, tag)


def cmd_synth(cfg: RunConfig, args) -> None:
    from .synthetic import generate_synthetic_pair

    src, tgt = cfg.synth_specs()
    out = cfg.run_dir / "data"
    source, target = generate_synthetic_pair(src, tgt, out)
    log.info("rendered %d source and %d target training images into %s", len(source), len(target), out)


def cmd_train_spgan(cfg: RunConfig, args) -> None:
    from .training import run_training

    source = _manifest(cfg, "source_train", "source")
    target = _manifest(cfg, "target_train", "target")
    trainer = run_training(source, target, cfg.spgan_config(cfg.seed), cfg.run_dir / "spgan", resume=not args.fresh)
    log.info("SPGAN training finished at step %d", trainer.step)


def cmd_translate(cfg: RunConfig, args) -> None:
    from .training import translate_dataset

    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.run_dir / "spgan" / "checkpoints" / "final"
    if not ckpt.is_dir():
        raise FileNotFoundError(f"generator checkpoint not found: {ckpt}")
    if args.direction == "source_to_target":
        manifest = _manifest(cfg, "source_train", "source")
    else:
        manifest = _manifest(cfg, "target_train", "target")
    out = Path(args.output) if args.output else cfg.run_dir / "translated"
    translated = translate_dataset(ckpt, args.direction, manifest, out)
    log.info("translated %d images into %s", len(translated), out)


def _reid_training_set(cfg: RunConfig):
    from .dataset import load_manifest

    if cfg.reid.train_on == "translated":
        path = cfg.run_dir / "translated"
        if not (path / "manifest.csv").exists():
            raise FileNotFoundError(f"no translated set at {path}; run `spgan-kit translate` first")
        return load_manifest(path, "csv_index", "source")
    if cfg.reid.train_on == "source":
        return _manifest(cfg, "source_train", "source")
    return _manifest(cfg, "target_train", "target")


def cmd_train_reid(cfg: RunConfig, args) -> None:
    from .reid import train_reid_model

    train = _reid_training_set(cfg)
    path = cfg.run_dir / "reid" / "model"
    path.parent.mkdir(parents=True, exist_ok=True)
    train_reid_model(train, cfg.reid_config(cfg.seed), path)
    log.info("re-ID model trained on %d %s images, saved to %s", len(train), cfg.reid.train_on, path)


def cmd_eval(cfg: RunConfig, args) -> None:
    from .evaluation import RetrievalProtocol
    from .reid import evaluate_tables, extract_features

    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.run_dir / "reid" / "model"
    if not ckpt.with_suffix(".npz").exists():
        raise FileNotFoundError(f"re-ID checkpoint not found: {ckpt}")
    parts, mode = cfg.eval.parts, cfg.eval.mode
    q = extract_features(ckpt, _manifest(cfg, "target_query", "target"), parts, mode)
    g = extract_features(ckpt, _manifest(cfg, "target_gallery", "target"), parts, mode)
    res = evaluate_tables(q, g, RetrievalProtocol(cfg.eval.drop_same_camera_matches))
    out_dir = cfg.run_dir / "eval"
    q.save(out_dir / f"query_P{parts}_{mode}")
    g.save(out_dir / f"gallery_P{parts}_{mode}")
    payload = {"parts": parts, "mode": mode, **res.row(), "n_queries_evaluated": res.n_queries_evaluated}
    (out_dir / f"results_P{parts}_{mode}.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in payload.items()))


def cmd_compare(cfg: RunConfig, args) -> None:
    from .compare import run_comparison

    report = run_comparison(cfg)
    if cfg.compare.report_format in ("text", "both"):
        print(report.to_text(), end="")
    else:
        print((cfg.run_dir / "report" / "results.csv").read_text(), end="")


COMMANDS = {
    "synth": cmd_synth,
    "train-spgan": cmd_train_spgan,
    "translate": cmd_translate,
    "train-reid": cmd_train_reid,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--run-dir", help="output directory (overrides [run] run_dir)")
    common.add_argument("--seed", type=int, help="top-level seed (overrides [run] seed)")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="spgan-kit", description="Similarity-preserving translation for domain-adaptive re-ID.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="render the synthetic two-domain benchmark")
    p = sub.add_parser("train-spgan", parents=[common], help="train the translation networks")
    p.add_argument("--fresh", action="store_true", help="ignore existing checkpoints in the run directory")
    p = sub.add_parser("translate", parents=[common], help="translate a labelled split with a trained generator")
    p.add_argument("--checkpoint", help="checkpoint directory (default: <run_dir>/spgan/checkpoints/final)")
    p.add_argument("--direction", choices=("source_to_target", "target_to_source"), default="source_to_target")
    p.add_argument("--output", help="output directory (default: <run_dir>/translated)")
    p = sub.add_parser("train-reid", parents=[common], help="train the re-ID backbone")
    p.add_argument("--train-on", choices=("translated", "source", "target"), help="overrides [reid] train_on")
    p = sub.add_parser("eval", parents=[common], help="extract features and evaluate on the target test split")
    p.add_argument("--checkpoint", help="re-ID checkpoint stem (default: <run_dir>/reid/model)")
    p.add_argument("--parts", type=int, help="LMP part count (overrides [eval] parts)")
    p.add_argument("--mode", choices=("max", "avg"), help="LMP pooling mode (overrides [eval] mode)")
    p = sub.add_parser("compare", parents=[common], help="run all configured variants and write the report")
    p.add_argument("--format", choices=("text", "csv", "both"), help="overrides [compare] report_format")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides: dict[str, dict[str, str]] = {}
    flag_map = {
        "seed": ("run", "seed"),
        "run_dir": ("run", "run_dir"),
        "parts": ("eval", "parts"),
        "mode": ("eval", "mode"),
        "format": ("compare", "report_format"),
        "train_on": ("reid", "train_on"),
    }
    for attr, (section, key) in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = str(value)
    return cfg.with_overrides(overrides) if overrides else cfg


def _setup_logging(run_dir: Path, verbose: bool) -> None:
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    fmt = logging.Formatter("%(levelname)s %(name)s: %(message)s")
    file_handler = logging.FileHandler(run_dir / "run.log")
    stream = logging.StreamHandler(sys.stderr)
    for h in (file_handler, stream):
        h.setFormatter(fmt)
        log.addHandler(h)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        write_resolved_config(cfg)
    except ConfigError as exc:
        print(f"spgan-kit: config error: {exc}", file=sys.stderr)
        return 2
    _setup_logging(cfg.run_dir, args.verbose)
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
