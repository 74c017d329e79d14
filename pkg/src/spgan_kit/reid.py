"""Identity-classification feature learning and part-pooled descriptor extraction."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .dataset import UNLABELED, DatasetManifest, load_images, relabel_dense
from .evaluation import EvalResult, RetrievalProtocol, evaluate
from .networks import BackboneSpec, ReidBackbone, load_network, read_sidecar, save_network

log = logging.getLogger(__name__)

PoolMode = Literal["max", "avg"]


@dataclass(frozen=True)
class ReidTrainConfig:
    backbone: str = "desk"
    feature_channels: int = 128
    batch_size: int = 16
    max_epochs: int = 50
    momentum: float = 0.9
    lr: float = 0.001
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 40  # decay applies from epoch lr_decay_epoch + 1 on
    weight_decay: float = 5e-4
    seed: int = 0
    height: int = 128
    width: int = 64
    stem_pool: bool = True

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr * (self.lr_decay_factor if epoch > self.lr_decay_epoch else 1.0)


def band_edges(height: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous horizontal bands; band b covers rows floor(b*H/P) .. floor((b+1)*H/P) - 1."""
    if parts <= 0:
        raise ValueError(f"number of parts must be positive, got {parts}")
    if parts > height:
        raise ValueError(f"cannot split a feature map of height {height} into {parts} parts")
    return [(b * height // parts, (b + 1) * height // parts) for b in range(parts)]


def lmp_pool(fmap: Tensor, parts: int, mode: PoolMode = "max") -> Tensor:
    """Pool each horizontal band of a (N x) C x H x W map and concatenate band by band.

    Output length is C * parts.  The operation has no parameters.
    """
    single = fmap.dim() == 3
    if single:
        fmap = fmap.unsqueeze(0)
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    pooled = []
    for lo, hi in band_edges(fmap.shape[2], parts):
        band = fmap[:, :, lo:hi, :]
        pooled.append(band.amax(dim=(2, 3)) if mode == "max" else band.mean(dim=(2, 3)))
    out = torch.cat(pooled, dim=1)
    return out[0] if single else out


def _build_backbone(cfg: ReidTrainConfig, num_classes: int) -> ReidBackbone:
    return ReidBackbone(
        BackboneSpec(
            name=cfg.backbone,
            num_classes=num_classes,
            feature_channels=cfg.feature_channels,
            height=cfg.height,
            width=cfg.width,
            stem_pool=cfg.stem_pool,
        )
    )


def train_reid_model(
    train_manifest: DatasetManifest,
    config: ReidTrainConfig,
    checkpoint_path: str | Path,
    images: Tensor | None = None,
) -> ReidBackbone:
    """Softmax identity classification with SGD; writes ``checkpoint_path.{npz,json}``.

    The sidecar stores the dense label mapping and the per-epoch training log.
    """
    ids = train_manifest.identities
    if (ids == UNLABELED).any():
        raise ValueError("re-ID training needs a fully labelled manifest")
    labels, classes = relabel_dense(ids)
    if len(classes) < 2:
        raise ValueError(f"re-ID training needs at least 2 identities, got {len(classes)}")
    if images is None:
        images = load_images(train_manifest, config.height, config.width)
    targets = torch.from_numpy(labels)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    net = _build_backbone(config, len(classes))
    opt = torch.optim.SGD(
        net.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
    )
    history = []
    n = len(labels)
    for epoch in range(1, config.max_epochs + 1):
        lr = config.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        net.train()
        order = rng.permutation(n)
        flips = rng.random(n) < 0.5
        correct, total_loss = 0, 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:  # batch norm needs more than one sample
                continue
            x = images[idx].clone()
            flip = torch.from_numpy(flips[idx])
            x[flip] = x[flip].flip(-1)
            logits = net(x)
            loss = F.cross_entropy(logits, targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(idx)
            correct += int((logits.argmax(1) == targets[idx]).sum())
        history.append({"epoch": epoch, "lr": lr, "loss": total_loss / n, "train_acc": correct / n})
        log.debug("reid epoch %d lr %.5f loss %.4f acc %.3f", epoch, lr, total_loss / n, correct / n)
    net.initialized = True
    save_network(
        net,
        checkpoint_path,
        step=config.max_epochs,
        config={"reid": asdict(config), "classes": classes, "history": history},
    )
    return net


def load_backbone(checkpoint_path: str | Path) -> ReidBackbone:
    sidecar = read_sidecar(checkpoint_path)
    net = ReidBackbone(BackboneSpec(**sidecar["spec"]))
    load_network(net, checkpoint_path)
    return net


@dataclass
class FeatureTable:
    features: np.ndarray  # (n_records, dim) float32
    identities: np.ndarray
    cameras: np.ndarray
    paths: list[str]
    parts: int = 1
    mode: str = "avg"

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        np.save(stem.with_suffix(".npy"), np.ascontiguousarray(self.features, dtype=np.float32))
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "identity", "camera", "row_index"])
            # paths relative to the table so a run directory can be moved or compared
            base = stem.parent.resolve()
            for row, (p, i, c) in enumerate(zip(self.paths, self.identities, self.cameras)):
                w.writerow([os.path.relpath(Path(p).resolve(), base), int(i), int(c), row])

    @classmethod
    def load(cls, stem: str | Path) -> FeatureTable:
        stem = Path(stem)
        feats = np.load(stem.with_suffix(".npy"))
        with open(stem.with_suffix(".csv"), newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["row_index"]))
        return cls(
            feats,
            np.array([int(r["identity"]) for r in rows]),
            np.array([int(r["camera"]) for r in rows]),
            [os.path.normpath(stem.parent.resolve() / r["path"]) for r in rows],
        )


@torch.no_grad()
def extract_features(
    checkpoint: str | Path | ReidBackbone,
    manifest: DatasetManifest,
    parts: int = 1,
    mode: PoolMode = "avg",
    batch_size: int = 64,
    images: Tensor | None = None,
) -> FeatureTable:
    """One pooled descriptor per manifest record, in manifest order."""
    net = checkpoint if isinstance(checkpoint, ReidBackbone) else load_backbone(checkpoint)
    h_f = net.feature_shape()[1]
    if parts > h_f:
        raise ValueError(f"requested {parts} parts but the backbone feature map has height {h_f}")
    net.eval()
    spec = net.spec
    if images is None:
        images = load_images(manifest, spec.height, spec.width)
    out = []
    for start in range(0, len(images), batch_size):
        fmap, _ = net.features(images[start : start + batch_size])
        out.append(lmp_pool(fmap, parts, mode))
    feats = torch.cat(out).numpy().astype(np.float32)
    return FeatureTable(
        feats, manifest.identities, manifest.cameras, [str(p) for p in manifest.paths], parts, mode
    )


def evaluate_tables(
    query: FeatureTable, gallery: FeatureTable, protocol: RetrievalProtocol = RetrievalProtocol()
) -> EvalResult:
    return evaluate(
        query.features, query.identities, query.cameras,
        gallery.features, gallery.identities, gallery.cameras,
        protocol,
    )


def training_history(checkpoint_path: str | Path) -> list[dict]:
    return read_sidecar(checkpoint_path)["config"]["history"]


def label_classes(checkpoint_path: str | Path) -> list[int]:
    return list(read_sidecar(checkpoint_path)["config"]["classes"])
