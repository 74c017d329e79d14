"""End-to-end variant comparison: translate (or not), train re-ID, evaluate.

Each variant trains its re-ID model on a different source of labelled images:

* ``supervised``: the labelled target training split (upper bound)
* ``direct``: the raw source training split (lower bound)
* ``cyclegan``, ``cyclegan_ide``, ``spgan``: the source split translated into
  the target style by a generator trained with lambda2 = lambda3 = 0,
  lambda3 = 0, or the full objective respectively

All variants are evaluated on the target query/gallery split.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import RunConfig  # noqa: E402
from .dataset import DatasetManifest, load_manifest  # noqa: E402
from .evaluation import RANKS, RetrievalProtocol  # noqa: E402
from .networks import read_sidecar  # noqa: E402
from .reid import evaluate_tables, extract_features, train_reid_model  # noqa: E402
from .synthetic import generate_synthetic_pair  # noqa: E402
from .training import config_to_dict, run_training, translate_dataset  # noqa: E402

log = logging.getLogger(__name__)

LABELS = {
    "supervised": "Supervised",
    "direct": "Direct Transfer",
    "cyclegan": "CycleGAN (basel.)",
    "cyclegan_ide": "CycleGAN (basel.) + L_ide",
    "spgan": "SPGAN",
}
# (lambda2, lambda3) overrides; None keeps the configured value
TRANSLATION_WEIGHTS = {"cyclegan": (0.0, 0.0), "cyclegan_ide": (None, 0.0), "spgan": (None, None)}


@dataclass(frozen=True)
class ResultRow:
    variant: str
    seed: str  # a seed number, or "mean"
    parts: int
    mode: str
    rank1: float
    rank5: float
    rank10: float
    rank20: float
    mAP: float
    n_queries: int

    @property
    def label(self) -> str:
        return LABELS[self.variant]

    @property
    def lmp(self) -> str:
        return f"P={self.parts} {self.mode}"


@dataclass
class ComparisonReport:
    rows: list[ResultRow] = field(default_factory=list)
    cmc: dict[tuple[str, str, int, str], np.ndarray] = field(default_factory=dict)

    def per_seed(self) -> list[ResultRow]:
        return [r for r in self.rows if r.seed != "mean"]

    def mean_row(self, variant: str, parts: int = 1, mode: str = "avg") -> ResultRow:
        for r in self.rows:
            if (r.variant, r.seed, r.parts, r.mode) == (variant, "mean", parts, mode):
                return r
        raise KeyError(f"no mean row for {variant} at P={parts} {mode}")

    def add_means(self) -> None:
        keys = list(dict.fromkeys((r.variant, r.parts, r.mode) for r in self.per_seed()))
        for variant, parts, mode in keys:
            group = [r for r in self.per_seed() if (r.variant, r.parts, r.mode) == (variant, parts, mode)]
            mean = {m: float(np.mean([getattr(r, m) for r in group])) for m in ("rank1", "rank5", "rank10", "rank20", "mAP")}
            self.rows.append(
                ResultRow(variant, "mean", parts, mode, n_queries=group[0].n_queries, **mean)
            )
            self.cmc[(variant, "mean", parts, mode)] = np.mean(
                [self.cmc[(variant, r.seed, parts, mode)] for r in group], axis=0
            )

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "variant", "seed", "lmp", "rank-1", "rank-5", "rank-10", "rank-20", "mAP", "n_queries"])
            for r in self.rows:
                w.writerow([r.label, r.variant, r.seed, r.lmp, *(f"{v:.4f}" for v in (r.rank1, r.rank5, r.rank10, r.rank20, r.mAP)), r.n_queries])

    def to_text(self) -> str:
        header = ("Method", "Seed", "LMP", "rank-1", "rank-5", "rank-10", "rank-20", "mAP")
        body = [
            (r.label, r.seed, r.lmp, *(f"{100 * v:.1f}" for v in (r.rank1, r.rank5, r.rank10, r.rank20, r.mAP)))
            for r in sorted(self.rows, key=lambda r: (r.parts, r.mode, r.seed == "mean"))
        ]
        widths = [max(len(str(row[i])) for row in [header, *body]) for i in range(len(header))]
        fmt = lambda row: "  ".join(  # noqa: E731
            str(c).ljust(w) if i < 3 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths))
        )
        rule = "-" * len(fmt(header))
        return "\n".join([fmt(header), rule, *map(fmt, body)]) + "\n"

    def plot_cmc(self, out_dir: Path, max_rank: int = 20) -> list[Path]:
        paths = []
        for parts, mode in dict.fromkeys((r.parts, r.mode) for r in self.rows):
            fig, ax = plt.subplots(figsize=(5, 4))
            for r in self.rows:
                if r.seed == "mean" and (r.parts, r.mode) == (parts, mode):
                    curve = self.cmc[(r.variant, "mean", parts, mode)][:max_rank]
                    ax.plot(np.arange(1, len(curve) + 1), 100 * curve, marker="o", ms=3, label=r.label)
            ax.set_xlabel("rank")
            ax.set_ylabel("matching rate (%)")
            ax.set_title(f"CMC, mean over seeds, P={parts} {mode}")
            ax.grid(alpha=0.3)
            ax.legend(fontsize=8)
            path = out_dir / f"cmc_P{parts}_{mode}.png"
            fig.savefig(path, dpi=100, metadata={"Software": None})
            plt.close(fig)
            paths.append(path)
        return paths


@dataclass(frozen=True)
class Splits:
    source: DatasetManifest
    target: DatasetManifest
    query: DatasetManifest
    gallery: DatasetManifest


def prepare_data(cfg: RunConfig) -> Splits:
    """Render the synthetic benchmark when no data paths are configured, then load the four splits."""
    if cfg.synthesizes_data:
        src, tgt = cfg.synth_specs()
        generate_synthetic_pair(src, tgt, cfg.run_dir / "data")
    load = lambda key, tag: load_manifest(cfg.data_path(key), cfg.data.naming_convention, tag)  # noqa: E731
    return Splits(
        load("source_train", "source"),
        load("target_train", "target"),
        load("target_query", "target"),
        load("target_gallery", "target"),
    )


def translation_checkpoint(cfg: RunConfig, splits: Splits, variant: str, seed: int, seed_dir: Path) -> Path:
    run_dir = seed_dir / variant
    ckpt = run_dir / "checkpoints" / "final"
    train_cfg = cfg.spgan_config(seed, *TRANSLATION_WEIGHTS[variant])
    if (ckpt / "G.npz").exists():
        if read_sidecar(ckpt / "G")["config"] != config_to_dict(train_cfg):
            raise ValueError(f"variant {variant!r}: checkpoint {ckpt} was trained with a different configuration")
        return ckpt
    if not cfg.compare.train_missing:
        raise FileNotFoundError(f"variant {variant!r}: missing upstream checkpoint {ckpt}")
    log.info("seed %d: training %s translator", seed, variant)
    run_training(splits.source, splits.target, train_cfg, run_dir)
    return ckpt


def run_comparison(cfg: RunConfig) -> ComparisonReport:
    """Run every configured variant for every seed and write the report to ``run_dir/report``."""
    splits = prepare_data(cfg)
    protocol = RetrievalProtocol(drop_same_camera_matches=cfg.eval.drop_same_camera_matches)
    report = ComparisonReport()
    for seed in cfg.compare.seeds:
        seed_dir = cfg.run_dir / f"seed_{seed}"
        for variant in cfg.compare.variants:
            if variant == "supervised":
                train = splits.target
            elif variant == "direct":
                train = splits.source
            else:
                ckpt = translation_checkpoint(cfg, splits, variant, seed, seed_dir)
                train = translate_dataset(ckpt, "source_to_target", splits.source, seed_dir / variant / "translated")
            log.info("seed %d: re-ID training for %s", seed, variant)
            net = train_reid_model(train, cfg.reid_config(seed), seed_dir / variant / "reid")
            for parts, mode in cfg.lmp_settings():
                q = extract_features(net, splits.query, parts, mode)
                g = extract_features(net, splits.gallery, parts, mode)
                res = evaluate_tables(q, g, protocol)
                row = ResultRow(
                    variant, str(seed), parts, mode,
                    *(res.rank_k[k] for k in RANKS), res.mAP, res.n_queries_evaluated,
                )
                report.rows.append(row)
                report.cmc[(variant, str(seed), parts, mode)] = res.cmc
                log.info("%s seed %d P=%d %s: rank-1 %.3f mAP %.3f", variant, seed, parts, mode, row.rank1, row.mAP)
    report.add_means()
    write_report(report, cfg.run_dir / "report", cfg.compare.report_format)
    return report


def write_report(report: ComparisonReport, out_dir: Path, fmt: str = "both") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt in ("csv", "both"):
        report.write_csv(out_dir / "results.csv")
    if fmt in ("text", "both"):
        (out_dir / "results.txt").write_text(report.to_text())
    report.plot_cmc(out_dir)
