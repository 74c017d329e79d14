"""Image manifests, decoding, per-step sampling and SPGAN pair construction."""
from __future__ import annotations

import csv
import logging
import re
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from PIL import Image
from torch import Tensor

log = logging.getLogger(__name__)

UNLABELED = -1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
FILENAME_RE = re.compile(r"^(\d+)_c(\d+)_([^.]+)\.(png|jpe?g|bmp)$", re.IGNORECASE)
MANIFEST_NAME = "manifest.csv"

Convention = Literal["id_cam_filename", "csv_index"]
DomainTag = Literal["source", "target"]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    path: Path
    identity: int
    camera: int


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple[Record, ...]
    domain_tag: DomainTag = "source"

    def __post_init__(self):
        for r in self.records:
            if r.camera < 0:
                raise ManifestError(f"negative camera id in {r.path}")
            if r.identity < 0 and r.identity != UNLABELED:
                raise ManifestError(f"invalid identity {r.identity} in {r.path}")
        if self.domain_tag == "source" and any(r.identity == UNLABELED for r in self.records):
            raise ManifestError("source manifest contains unlabeled records")

    def __len__(self):
        return len(self.records)

    @property
    def paths(self) -> list[Path]:
        return [r.path for r in self.records]

    @property
    def identities(self) -> np.ndarray:
        return np.array([r.identity for r in self.records], dtype=np.int64)

    @property
    def cameras(self) -> np.ndarray:
        return np.array([r.camera for r in self.records], dtype=np.int64)

    def with_tag(self, tag: DomainTag) -> DatasetManifest:
        return DatasetManifest(self.root, self.records, tag)


def parse_filename(name: str) -> tuple[int, int]:
    m = FILENAME_RE.match(name)
    if m is None:
        raise ManifestError(f"cannot parse identity/camera from filename: {name}")
    return int(m.group(1)), int(m.group(2))


def load_manifest(
    root: str | Path, naming_convention: Convention = "id_cam_filename", domain_tag: DomainTag = "source"
) -> DatasetManifest:
    """Read a manifest from an image directory or a ``path,identity,camera`` CSV.

    For ``csv_index`` the root may be the CSV itself or a directory holding
    ``manifest.csv``; paths in the CSV are relative to the CSV's directory.
    Records are ordered lexicographically by path.
    """
    root = Path(root)
    if not root.exists():
        raise ManifestError(f"manifest root does not exist: {root}")
    if naming_convention == "id_cam_filename":
        base = root
        records = []
        for p in sorted(root.iterdir()):
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            identity, camera = parse_filename(p.name)
            records.append(Record(p, identity, camera))
    elif naming_convention == "csv_index":
        csv_path = root / MANIFEST_NAME if root.is_dir() else root
        base = csv_path.parent
        records = []
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "identity", "camera"} <= set(reader.fieldnames):
                raise ManifestError(f"{csv_path}: header must contain path,identity,camera")
            for row in reader:
                ident = row["identity"].strip()
                records.append(
                    Record(base / row["path"], int(ident) if ident else UNLABELED, int(row["camera"]))
                )
        records.sort(key=lambda r: str(r.path))
    else:
        raise ManifestError(f"unknown naming convention {naming_convention!r}")
    if not records:
        raise ManifestError(f"empty manifest: {root}")
    missing = [str(r.path) for r in records if not r.path.is_file()]
    if missing:
        raise ManifestError("missing image files: " + ", ".join(missing))
    return DatasetManifest(base, tuple(records), domain_tag)


def write_manifest_csv(manifest: DatasetManifest, csv_path: str | Path | None = None) -> Path:
    csv_path = Path(csv_path) if csv_path else manifest.root / MANIFEST_NAME
    base = csv_path.parent
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "identity", "camera"])
        for r in manifest.records:
            ident = "" if r.identity == UNLABELED else r.identity
            w.writerow([Path(r.path).relative_to(base).as_posix(), ident, r.camera])
    return csv_path


def decode_image(path: str | Path, height: int, width: int) -> Tensor:
    """Decode to a 3 x H x W float32 tensor in [-1, 1]; grayscale is replicated."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (width, height):
                im = im.resize((width, height), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr.transpose(2, 0, 1) / 127.5 - 1.0)


def encode_image(x: Tensor, path: str | Path) -> None:
    """Inverse of :func:`decode_image` (quantised to 8 bits, written as PNG)."""
    arr = ((x.detach().cpu().clamp(-1, 1).numpy() + 1.0) * 127.5).round().astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path, format="PNG")


def load_images(manifest: DatasetManifest, height: int, width: int) -> Tensor:
    if not len(manifest):
        return torch.empty(0, 3, height, width)
    return torch.stack([decode_image(p, height, width) for p in manifest.paths])


def epoch_length(n_source: int, n_target: int) -> int:
    return max(n_source, n_target)


def epoch_order(n_source: int, n_target: int, seed: int, epoch: int) -> list[tuple[int, int]]:
    """Index pairs for one epoch: the larger set once in shuffled order, the
    smaller one cycled with a fresh shuffle per pass.  Depends only on
    ``(seed, epoch)`` so a resumed run regenerates the same order."""
    rng = np.random.default_rng([seed, epoch])
    n = epoch_length(n_source, n_target)

    def stream(size: int) -> np.ndarray:
        reps = -(-n // size)
        return np.concatenate([rng.permutation(size) for _ in range(reps)])[:n]

    s, t = stream(n_source), stream(n_target)
    return list(zip(s.tolist(), t.tolist()))


def sample_training_step(
    source: DatasetManifest,
    target: DatasetManifest,
    rng: np.random.Generator,
    height: int = 128,
    width: int = 64,
) -> tuple[Tensor, Tensor]:
    """Draw one image from each domain uniformly at random."""
    if not len(source) or not len(target):
        raise ManifestError("both manifests must be non-empty")
    i = int(rng.integers(len(source)))
    j = int(rng.integers(len(target)))
    return (
        decode_image(source.records[i].path, height, width),
        decode_image(target.records[j].path, height, width),
    )


PAIR_LABELS = {"src_pos": 1, "tgt_pos": 1, "src_neg": 0, "tgt_neg": 0}


@dataclass
class PairBatch:
    pairs: list[tuple[Tensor, Tensor, int]] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def labels(self) -> Tensor:
        return torch.tensor([i for _, _, i in self.pairs], dtype=torch.float32)

    def stacked(self) -> tuple[Tensor, Tensor, Tensor]:
        """``(A, B, labels)`` with A/B of shape (n_pairs, C, H, W)."""
        a = torch.stack([p[0] for p in self.pairs])
        b = torch.stack([p[1] for p in self.pairs])
        return a, b, self.labels().to(a.dtype)


def pair_batch_from_translations(x_S: Tensor, x_T: Tensor, G_x_S: Tensor, F_x_T: Tensor) -> PairBatch:
    """Two positive pairs (image, its translation) and two negative pairs
    (translated image, real image of the other domain)."""
    items = {
        "src_pos": (x_S, G_x_S),
        "tgt_pos": (x_T, F_x_T),
        "src_neg": (G_x_S, x_T),
        "tgt_neg": (F_x_T, x_S),
    }
    batch = PairBatch()
    for tag, (a, b) in items.items():
        batch.pairs.append((a, b, PAIR_LABELS[tag]))
        batch.provenance.append(tag)
    return batch


def build_pair_batch(
    x_S: Tensor, x_T: Tensor, G: Callable[[Tensor], Tensor], F: Callable[[Tensor], Tensor]
) -> PairBatch:
    return pair_batch_from_translations(x_S, x_T, G(x_S), F(x_T))


def relabel_dense(identities: Sequence[int]) -> tuple[np.ndarray, list[int]]:
    """Map arbitrary identity ids to 0..K-1 (sorted order); returns (labels, classes)."""
    classes = sorted(set(int(i) for i in identities))
    index = {c: k for k, c in enumerate(classes)}
    if classes != list(range(len(classes))):
        log.info("re-indexing %d identity labels densely", len(classes))
    return np.array([index[int(i)] for i in identities], dtype=np.int64), classes
