"""Deterministic two-domain person-like benchmark.

Each identity is a body silhouette (head, torso, legs) with identity-specific
clothing colours and a fixed arrangement of coloured glyphs.  Cameras move and
rescale the figure; the domain style (background, hue, saturation, brightness,
contrast, blur, sensor noise) is applied to every image of a domain.
"""
from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image, ImageDraw, ImageFilter

from .dataset import DatasetManifest, Record, write_manifest_csv

SUPERSAMPLE = 4
GLYPH_SHAPES = ("circle", "square", "triangle", "diamond", "bar")
# glyph anchor slots in body coordinates (x in [-1, 1] across the torso, y down the figure)
GLYPH_SLOTS = ((-0.5, 0.30), (0.5, 0.30), (-0.5, 0.45), (0.5, 0.45), (-0.4, 0.68), (0.4, 0.68), (0.0, 0.38))


@dataclass(frozen=True)
class StyleTransform:
    hue_shift: float = 0.0  # fraction of the hue circle
    saturation: float = 1.0
    brightness: float = 1.0
    contrast: float = 1.0
    blur: float = 0.0  # Gaussian radius in output pixels
    noise: float = 0.0  # per-pixel Gaussian std on the [0, 1] scale
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    background_texture: float = 0.0  # amplitude of the random background pattern


@dataclass(frozen=True)
class SyntheticDomainSpec:
    n_identities: int = 20
    images_per_identity: int = 6
    n_cameras: int = 2
    style: StyleTransform = field(default_factory=StyleTransform)
    render_seed: int = 0
    identity_offset: int = 0
    n_test_identities: int = 0
    test_images_per_identity: int = 0  # 0 -> same as images_per_identity
    height: int = 128
    width: int = 64

    @property
    def train_ids(self) -> range:
        return range(self.identity_offset, self.identity_offset + self.n_identities)

    @property
    def test_ids(self) -> range:
        start = self.identity_offset + self.n_identities
        return range(start, start + self.n_test_identities)

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticDomainSpec:
        d = dict(d)
        style = d.pop("style", {})
        if isinstance(style, dict):
            style = dict(style)
            if "background" in style:
                style["background"] = tuple(style["background"])
            style = StyleTransform(**style)
        return cls(style=style, **d)


@dataclass(frozen=True)
class _Identity:
    skin: tuple[float, float, float]
    top: tuple[float, float, float]
    bottom: tuple[float, float, float]
    shoes: tuple[float, float, float]
    width: float
    glyphs: tuple[tuple[str, int, tuple[float, float, float], float], ...]


def _hsv(rng, s=(0.55, 1.0), v=(0.45, 1.0)) -> tuple[float, float, float]:
    rgb = hsv_to_rgb([rng.uniform(), rng.uniform(*s), rng.uniform(*v)])
    return tuple(float(c) for c in rgb)


def _identity(seed: int, identity: int) -> _Identity:
    rng = np.random.default_rng([seed, identity, 0xB0D7])
    skin_tones = ((0.96, 0.80, 0.69), (0.87, 0.67, 0.52), (0.63, 0.45, 0.33), (0.40, 0.28, 0.20))
    n_glyphs = int(rng.integers(2, 4))
    slots = rng.choice(len(GLYPH_SLOTS), size=n_glyphs, replace=False)
    glyphs = tuple(
        (GLYPH_SHAPES[int(rng.integers(len(GLYPH_SHAPES)))], int(slot), _hsv(rng), float(rng.uniform(0.18, 0.28)))
        for slot in sorted(slots)
    )
    return _Identity(
        skin=skin_tones[int(rng.integers(len(skin_tones)))],
        top=_hsv(rng),
        bottom=_hsv(rng, s=(0.2, 1.0), v=(0.2, 0.9)),
        shoes=_hsv(rng, s=(0.0, 0.5), v=(0.05, 0.5)),
        width=float(rng.uniform(0.30, 0.42)),
        glyphs=glyphs,
    )


def _rgb255(c) -> tuple[int, int, int]:
    return tuple(int(round(255 * min(max(v, 0.0), 1.0))) for v in c)


def _background(style: StyleTransform, rng, h: int, w: int) -> np.ndarray:
    base = np.asarray(style.background, dtype=np.float64) + rng.normal(0.0, 0.03, 3)
    img = np.broadcast_to(base, (h, w, 3)).copy()
    if style.background_texture > 0:
        yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
        pattern = np.zeros((h, w, 3))
        for _ in range(4):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(4, 14)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            pattern += wave[..., None] * rng.uniform(-1, 1, 3)
        img += style.background_texture * pattern / 2.0
    return img.clip(0, 1)


def _draw_glyph(draw: ImageDraw.ImageDraw, shape: str, cx: float, cy: float, r: float, color) -> None:
    fill = _rgb255(color)
    if shape == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill)
    elif shape == "square":
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=fill)
    elif shape == "triangle":
        draw.polygon([(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)], fill=fill)
    elif shape == "diamond":
        draw.polygon([(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)], fill=fill)
    else:
        draw.rectangle([cx - r, cy - r / 3, cx + r, cy + r / 3], fill=fill)


def _camera_view(seed: int, camera: int) -> tuple[float, float, float]:
    rng = np.random.default_rng([seed, camera, 0xCA3])
    return float(rng.uniform(-0.10, 0.10)), float(rng.uniform(-0.04, 0.04)), float(rng.uniform(0.80, 1.0))


def _apply_style(img: np.ndarray, style: StyleTransform, rng) -> np.ndarray:
    if style.hue_shift or style.saturation != 1.0:
        hsv = rgb_to_hsv(img.clip(0, 1))
        hsv[..., 0] = (hsv[..., 0] + style.hue_shift) % 1.0
        hsv[..., 1] = (hsv[..., 1] * style.saturation).clip(0, 1)
        img = hsv_to_rgb(hsv)
    img = (img - 0.5) * style.contrast + 0.5
    img = img * style.brightness
    if style.noise > 0:
        img = img + rng.normal(0.0, style.noise, img.shape)
    return img.clip(0, 1)


def render_image(spec: SyntheticDomainSpec, identity: int, camera: int, index: int) -> Image.Image:
    """Render one ``spec.height x spec.width`` RGB image; pure function of its arguments."""
    h, w = spec.height * SUPERSAMPLE, spec.width * SUPERSAMPLE
    rng = np.random.default_rng([spec.render_seed, identity, camera, index])
    ident = _identity(spec.render_seed, identity)
    cam_dx, cam_dy, cam_scale = _camera_view(spec.render_seed, camera)
    scale = cam_scale * rng.uniform(0.95, 1.05)
    cx = w * (0.5 + cam_dx + rng.uniform(-0.04, 0.04))
    top = h * (0.06 + cam_dy + rng.uniform(-0.02, 0.02))
    fig_h = h * 0.88 * scale
    half_w = w * ident.width * scale

    bg = _background(spec.style, rng, h, w)
    canvas = Image.fromarray((bg * 255).round().astype(np.uint8))
    draw = ImageDraw.Draw(canvas)

    def y(frac):
        return top + frac * fig_h

    head_r = fig_h * 0.075
    draw.ellipse([cx - head_r, y(0.0), cx + head_r, y(0.0) + 2 * head_r], fill=_rgb255(ident.skin))
    draw.rectangle([cx - half_w, y(0.17), cx + half_w, y(0.55)], fill=_rgb255(ident.top))
    arm = half_w * 0.28
    draw.rectangle([cx - half_w - arm, y(0.18), cx - half_w, y(0.50)], fill=_rgb255(ident.top))
    draw.rectangle([cx + half_w, y(0.18), cx + half_w + arm, y(0.50)], fill=_rgb255(ident.top))
    gap = half_w * 0.12
    draw.rectangle([cx - half_w * 0.9, y(0.55), cx - gap, y(0.94)], fill=_rgb255(ident.bottom))
    draw.rectangle([cx + gap, y(0.55), cx + half_w * 0.9, y(0.94)], fill=_rgb255(ident.bottom))
    draw.rectangle([cx - half_w * 0.95, y(0.94), cx - gap, y(1.0)], fill=_rgb255(ident.shoes))
    draw.rectangle([cx + gap, y(0.94), cx + half_w * 0.95, y(1.0)], fill=_rgb255(ident.shoes))
    for shape, slot, color, size in ident.glyphs:
        sx, sy = GLYPH_SLOTS[slot]
        _draw_glyph(draw, shape, cx + sx * half_w, y(sy), size * half_w, color)

    small = canvas.resize((spec.width, spec.height), Image.LANCZOS)
    if spec.style.blur > 0:
        small = small.filter(ImageFilter.GaussianBlur(spec.style.blur))
    img = _apply_style(np.asarray(small, dtype=np.float64) / 255.0, spec.style, rng)
    return Image.fromarray((img * 255).round().astype(np.uint8))


def _render_split(spec, ids, per_id: int, out: Path, split: str) -> list[Record]:
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for identity in ids:
        for k in range(per_id):
            camera = k % spec.n_cameras + 1
            # the first image per (identity, camera) of a test split is a query
            is_query = k < spec.n_cameras
            if split == "query" and not is_query or split == "gallery" and is_query:
                continue
            path = out / f"{identity:04d}_c{camera}_{k:03d}.png"
            render_image(spec, identity, camera, k).save(path, format="PNG")
            records.append(Record(path, identity, camera))
    return records


def _all_ids(spec: SyntheticDomainSpec) -> set[int]:
    return set(spec.train_ids) | set(spec.test_ids)


def generate_synthetic_pair(
    source_spec: SyntheticDomainSpec, target_spec: SyntheticDomainSpec, out_dir: str | Path
) -> tuple[DatasetManifest, DatasetManifest]:
    """Render both domains under ``out_dir/{source,target}/{train,query,gallery}``.

    Returns the (source train, target train) manifests.  Every split directory
    also receives a ``manifest.csv``.
    """
    overlap = _all_ids(source_spec) & _all_ids(target_spec)
    if overlap:
        raise ValueError(f"source and target identity sets overlap: {sorted(overlap)[:10]}")
    if source_spec.style == target_spec.style:
        raise ValueError("source and target domains must differ in style")
    if (source_spec.height, source_spec.width) != (target_spec.height, target_spec.width):
        raise ValueError("both domains must share one resolution")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory not writable: {out_dir}") from exc

    manifests = {}
    for tag, spec in (("source", source_spec), ("target", target_spec)):
        base = out_dir / tag
        if base.exists():
            shutil.rmtree(base)
        test_per_id = spec.test_images_per_identity or spec.images_per_identity
        splits = {"train": (spec.train_ids, spec.images_per_identity)}
        if spec.n_test_identities:
            splits["query"] = splits["gallery"] = (spec.test_ids, test_per_id)
        for split, (ids, per_id) in splits.items():
            if split != "train" and per_id <= spec.n_cameras:
                raise ValueError("test identities need more images than cameras to fill the gallery")
            recs = _render_split(spec, ids, per_id, base / split, split)
            m = DatasetManifest(base / split, tuple(sorted(recs, key=lambda r: str(r.path))), tag)
            write_manifest_csv(m)
            manifests[(tag, split)] = m
    (out_dir / "synthetic.json").write_text(
        json.dumps({"source": asdict(source_spec), "target": asdict(target_spec)}, indent=2, sort_keys=True)
    )
    return manifests[("source", "train")], manifests[("target", "train")]
