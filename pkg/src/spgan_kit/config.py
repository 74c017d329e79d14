"""Sectioned run configuration shared by the CLI and the comparison harness.

The file format is INI.  Every key is optional; a missing key takes the
default below, and an unknown section or key is an error.  Blank data paths
mean "the synthetic benchmark rendered into ``<run_dir>/data``".
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossWeights
from .reid import ReidTrainConfig
from .synthetic import StyleTransform, SyntheticDomainSpec
from .training import TrainConfig

VARIANTS = ("supervised", "direct", "cyclegan", "cyclegan_ide", "spgan")


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key or path."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    run_dir: str = "runs/default"


@dataclass(frozen=True)
class DataSection:
    height: int = 128
    width: int = 64
    naming_convention: str = "csv_index"
    source_train: str = ""
    target_train: str = ""
    target_query: str = ""
    target_gallery: str = ""


@dataclass(frozen=True)
class SourceDomainSection:
    n_identities: int = 20
    images_per_identity: int = 6
    n_cameras: int = 2
    identity_offset: int = 0
    n_test_identities: int = 0
    test_images_per_identity: int = 0
    hue_shift: float = 0.0
    saturation: float = 1.0
    brightness: float = 1.0
    contrast: float = 1.0
    blur: float = 0.0
    noise: float = 0.0
    background: tuple[float, ...] = (0.55, 0.55, 0.6)
    background_texture: float = 0.0

    def to_spec(self, height: int, width: int, render_seed: int) -> SyntheticDomainSpec:
        style_keys = {f.name for f in dataclasses.fields(StyleTransform)}
        values = dataclasses.asdict(self)
        style = StyleTransform(**{k: values.pop(k) for k in style_keys})
        return SyntheticDomainSpec(style=style, render_seed=render_seed, height=height, width=width, **values)


@dataclass(frozen=True)
class TargetDomainSection(SourceDomainSection):
    identity_offset: int = 100
    n_test_identities: int = 50
    hue_shift: float = 0.5
    saturation: float = 0.6
    brightness: float = 0.75
    contrast: float = 0.7
    background: tuple[float, ...] = (0.3, 0.4, 0.25)


@dataclass(frozen=True)
class SpganSection:
    lambda1: float = 10.0
    lambda2: float = 5.0
    lambda3: float = 2.0
    margin_m: float = 2.0
    learning_rate: float = 0.0002
    epochs: int = 5
    history_buffer_size: int = 50
    beta1: float = 0.5
    beta2: float = 0.999
    generator_filters: int = 32
    n_res_blocks: int = 4
    discriminator_filters: int = 32
    discriminator_layers: int = 3


@dataclass(frozen=True)
class ReidSection:
    backbone: str = "desk"
    feature_channels: int = 128
    batch_size: int = 16
    max_epochs: int = 50
    momentum: float = 0.9
    lr: float = 0.001
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 40
    weight_decay: float = 5e-4
    stem_pool: bool = True
    train_on: str = "translated"  # translated | source | target


@dataclass(frozen=True)
class EvalSection:
    parts: int = 1
    mode: str = "avg"
    drop_same_camera_matches: bool = True


@dataclass(frozen=True)
class CompareSection:
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = (0, 1, 2)
    lmp: tuple[str, ...] = ("1:avg", "1:max", "7:max")
    report_format: str = "both"  # text | csv | both
    train_missing: bool = True


SECTIONS: dict[str, type] = {
    "run": RunSection,
    "data": DataSection,
    "synth.source": SourceDomainSection,
    "synth.target": TargetDomainSection,
    "spgan": SpganSection,
    "reid": ReidSection,
    "eval": EvalSection,
    "compare": CompareSection,
}
_ATTR = {name: name.replace(".", "_") for name in SECTIONS}


def stage_seed(seed: int, stage: str) -> int:
    """Independent 31-bit seed for a named stage, derived from the run seed."""
    state = np.random.SeedSequence([seed, zlib.crc32(stage.encode())]).generate_state(1)[0]
    return int(state) & 0x7FFFFFFF


def parse_lmp(setting: str) -> tuple[int, str]:
    parts, _, mode = setting.partition(":")
    if not parts.strip().isdigit() or mode.strip() not in ("max", "avg"):
        raise ConfigError(f"compare.lmp: bad setting {setting!r}, expected '<parts>:<max|avg>'")
    return int(parts), mode.strip()


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    synth_source: SourceDomainSection = field(default_factory=SourceDomainSection)
    synth_target: TargetDomainSection = field(default_factory=TargetDomainSection)
    spgan: SpganSection = field(default_factory=SpganSection)
    reid: ReidSection = field(default_factory=ReidSection)
    eval: EvalSection = field(default_factory=EvalSection)
    compare: CompareSection = field(default_factory=CompareSection)

    def __post_init__(self):
        for v in self.compare.variants:
            if v not in VARIANTS:
                raise ConfigError(f"compare.variants: unknown variant {v!r}")
        if not self.compare.seeds:
            raise ConfigError("compare.seeds: at least one seed is required")
        for s in self.compare.lmp:
            parse_lmp(s)
        if self.eval.mode not in ("max", "avg"):
            raise ConfigError(f"eval.mode: expected max or avg, got {self.eval.mode!r}")
        if self.compare.report_format not in ("text", "csv", "both"):
            raise ConfigError(f"compare.report_format: unknown format {self.compare.report_format!r}")
        if self.reid.train_on not in ("translated", "source", "target"):
            raise ConfigError(f"reid.train_on: unknown training set {self.reid.train_on!r}")
        if self.data.naming_convention not in ("csv_index", "id_cam_filename"):
            raise ConfigError(f"data.naming_convention: unknown convention {self.data.naming_convention!r}")

    @property
    def run_dir(self) -> Path:
        return Path(self.run.run_dir)

    @property
    def seed(self) -> int:
        return self.run.seed

    # derived stage configurations

    def data_path(self, key: str) -> Path:
        explicit = getattr(self.data, key)
        if explicit:
            return Path(explicit)
        domain, _, split = key.partition("_")
        return self.run_dir / "data" / domain / split

    @property
    def synthesizes_data(self) -> bool:
        return not any(getattr(self.data, k) for k in ("source_train", "target_train", "target_query", "target_gallery"))

    def synth_specs(self) -> tuple[SyntheticDomainSpec, SyntheticDomainSpec]:
        h, w = self.data.height, self.data.width
        return (
            self.synth_source.to_spec(h, w, stage_seed(self.seed, "synth.source")),
            self.synth_target.to_spec(h, w, stage_seed(self.seed, "synth.target")),
        )

    def spgan_config(self, seed: int, lambda2: float | None = None, lambda3: float | None = None) -> TrainConfig:
        s = self.spgan
        weights = LossWeights(
            lambda1=s.lambda1,
            lambda2=s.lambda2 if lambda2 is None else lambda2,
            lambda3=s.lambda3 if lambda3 is None else lambda3,
            margin_m=s.margin_m,
        )
        return TrainConfig(
            weights=weights,
            learning_rate=s.learning_rate,
            epochs=s.epochs,
            seed=stage_seed(seed, "spgan"),
            history_buffer_size=s.history_buffer_size,
            betas=(s.beta1, s.beta2),
            height=self.data.height,
            width=self.data.width,
            generator_filters=s.generator_filters,
            n_res_blocks=s.n_res_blocks,
            discriminator_filters=s.discriminator_filters,
            discriminator_layers=s.discriminator_layers,
        )

    def reid_config(self, seed: int) -> ReidTrainConfig:
        fields = dataclasses.asdict(self.reid)
        fields.pop("train_on")
        return ReidTrainConfig(**fields, seed=stage_seed(seed, "reid"), height=self.data.height, width=self.data.width)

    def lmp_settings(self) -> list[tuple[int, str]]:
        return [parse_lmp(s) for s in self.compare.lmp]

    def with_overrides(self, overrides: dict[str, dict[str, str]]) -> RunConfig:
        return _build({sec: {**_as_strings(self, sec), **vals} for sec, vals in overrides.items()}, base=self)


# parsing and serialisation


def _convert(section: str, key: str, raw: str, typ):
    where = f"{section}.{key}"
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, float, str):
            return typ(raw)
        if typing.get_origin(typ) is tuple:
            inner = typing.get_args(typ)[0]
            return tuple(inner(x.strip()) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None
    raise ConfigError(f"{where}: unsupported type {typ}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _as_strings(cfg: RunConfig, section: str) -> dict[str, str]:
    obj = getattr(cfg, _ATTR[section])
    return {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _build(raw: dict[str, dict[str, str]], base: RunConfig | None = None) -> RunConfig:
    sections = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name, {})
        hints = typing.get_type_hints(cls)
        known = {f.name for f in dataclasses.fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError(f"unknown key '{name}.{key}'")
        parsed = {k: _convert(name, k, v, hints[k]) for k, v in values.items()}
        start = getattr(base, _ATTR[name]) if base is not None else cls()
        try:
            sections[_ATTR[name]] = dataclasses.replace(start, **parsed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    return RunConfig(**sections)


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults_unused__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    raw = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section '[{section}]' in {source}")
        raw[section] = dict(parser.items(section))
    return _build(raw)


def load_config(path: str | Path | None) -> RunConfig:
    """Parse an INI file; ``None`` gives the fully defaulted configuration."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in _as_strings(cfg, name).items()]
        lines.append("")
    return "\n".join(lines)


def write_resolved_config(cfg: RunConfig, run_dir: str | Path | None = None) -> Path:
    run_dir = Path(run_dir) if run_dir is not None else cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "resolved_config.cfg"
    path.write_text(dump_config(cfg))
    return path
