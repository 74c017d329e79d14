"""Generators, patch discriminators, the Siamese embedder and re-ID backbones."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GeneratorSpec:
    channels: int = 3
    height: int = 128
    width: int = 64
    base_filters: int = 32
    n_res_blocks: int = 4  # 9 for the full reference architecture


@dataclass(frozen=True)
class DiscriminatorSpec:
    channels: int = 3
    height: int = 128
    width: int = 64
    base_filters: int = 32
    n_layers: int = 3


@dataclass(frozen=True)
class SiaNetSpec:
    channels: int = 3
    height: int = 128
    width: int = 64
    embedding_dim: int = 128


@dataclass(frozen=True)
class BackboneSpec:
    name: str = "desk"  # "desk" or "resnet50"
    num_classes: int = 2
    feature_channels: int = 128
    channels: int = 3
    height: int = 128
    width: int = 64
    stem_pool: bool = True  # desk only: False halves the trunk's total stride (8 -> 4)


def spec_hash(spec) -> str:
    payload = json.dumps({"type": type(spec).__name__, **asdict(spec)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def init_gaussian(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def _check_input(x: Tensor, channels: int, height: int, width: int) -> None:
    if x.dim() != 4 or tuple(x.shape[1:]) != (channels, height, width):
        raise ValueError(
            f"expected input of shape (N, {channels}, {height}, {width}), got {tuple(x.shape)}"
        )


class _ResBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder (two stride-2 convs), residual blocks, decoder, tanh."""

    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        if spec.height % 4 or spec.width % 4:
            raise ValueError(f"generator resolution must be divisible by 4, got {spec.height}x{spec.width}")
        self.spec = spec
        nf = spec.base_filters
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(spec.channels, nf, 7),
            nn.InstanceNorm2d(nf),
            nn.ReLU(True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(nf * mult, nf * mult * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(nf * mult * 2),
                nn.ReLU(True),
            ]
        layers += [_ResBlock(nf * 4) for _ in range(spec.n_res_blocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(nf * mult, nf * mult // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(nf * mult // 2),
                nn.ReLU(True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(nf, spec.channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)
        init_gaussian(self)

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.spec.channels, self.spec.height, self.spec.width)
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """Patch-level least-squares critic; no normalisation on the first block."""

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        nf = spec.base_filters
        layers: list[nn.Module] = [nn.Conv2d(spec.channels, nf, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, spec.n_layers):
            prev, mult = mult, min(2**n, 8)
            layers += [
                nn.Conv2d(nf * prev, nf * mult, 4, 2, 1),
                nn.InstanceNorm2d(nf * mult),
                nn.LeakyReLU(0.2, True),
            ]
        prev, mult = mult, min(2**spec.n_layers, 8)
        layers += [
            nn.Conv2d(nf * prev, nf * mult, 4, 1, 1),
            nn.InstanceNorm2d(nf * mult),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(nf * mult, 1, 4, 1, 1),
        ]
        self.model = nn.Sequential(*layers)
        init_gaussian(self)
        h, w = self.score_shape(spec.height, spec.width)
        if h < 1 or w < 1:
            raise ValueError(f"input {spec.height}x{spec.width} too small for {spec.n_layers} layers")

    def score_shape(self, height: int, width: int) -> tuple[int, int]:
        for _ in range(self.spec.n_layers):
            height, width = height // 2, width // 2
        # two stride-1 4x4 convs with padding 1 each remove one pixel
        return height - 2, width - 2

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.spec.channels, self.spec.height, self.spec.width)
        return self.model(x)


class _SamePad(nn.Module):
    """Zero padding reproducing ``padding='SAME'`` semantics: output = ceil(n / stride)."""

    def __init__(self, kernel: int, stride: int, value: float = 0.0):
        super().__init__()
        self.kernel, self.stride, self.value = kernel, stride, value

    def _pads(self, n: int) -> tuple[int, int]:
        out = math.ceil(n / self.stride)
        total = max((out - 1) * self.stride + self.kernel - n, 0)
        return total // 2, total - total // 2

    def forward(self, x):
        top, bottom = self._pads(x.shape[-2])
        left, right = self._pads(x.shape[-1])
        return F.pad(x, (left, right, top, bottom), value=self.value)


# below this side length the last conv stages see nothing but padding
SIANET_MIN_SIDE = 16


class SiaNet(nn.Module):
    """4x(conv 4x4/2 + maxpool 2x2/2) followed by a 128-d fully connected layer.

    A global average pool sits before the FC so the FC input is 512 at any
    resolution.
    """

    def __init__(self, spec: SiaNetSpec = SiaNetSpec()):
        super().__init__()
        if min(spec.height, spec.width) < SIANET_MIN_SIDE:
            raise ValueError(
                f"SiaNet needs inputs of at least {SIANET_MIN_SIDE}px per side, got {spec.height}x{spec.width}"
            )
        self.spec = spec
        layers: list[nn.Module] = []
        c_in = spec.channels
        for c_out in (64, 128, 256, 512):
            layers += [
                _SamePad(4, 2),
                nn.Conv2d(c_in, c_out, 4, 2),
                nn.LeakyReLU(0.2, True),
                _SamePad(2, 2, value=-math.inf),
                nn.MaxPool2d(2, 2),
            ]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(512, spec.embedding_dim)
        init_gaussian(self)

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.spec.channels, self.spec.height, self.spec.width)
        h = self.features(x).mean(dim=(2, 3))
        return self.fc(h)


class _BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ReidBackbone(nn.Module):
    """Feature extractor plus identity classifier head.

    ``trunk`` maps an image batch to the last convolutional feature map
    (C_f x H_f x W_f); the pooled vector feeds a linear classifier whose width
    equals the number of training identities.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        if spec.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.spec = spec
        if spec.name == "desk":
            c = spec.feature_channels
            widths = (c // 4, c // 2, c)
            self.trunk = nn.Sequential(
                nn.Conv2d(spec.channels, widths[0], 3, 1, 1, bias=False),
                nn.BatchNorm2d(widths[0]),
                nn.ReLU(True),
                nn.MaxPool2d(2) if spec.stem_pool else nn.Identity(),
                _BasicBlock(widths[0], widths[0], 1),
                _BasicBlock(widths[0], widths[1], 2),
                _BasicBlock(widths[1], widths[2], 2),
            )
        elif spec.name == "resnet50":
            from torchvision.models import resnet50

            if spec.feature_channels != 2048:
                raise ValueError("resnet50 backbone has 2048 feature channels")
            net = resnet50(weights=None)
            self.trunk = nn.Sequential(*list(net.children())[:-2])
        else:
            raise ValueError(f"unknown backbone {spec.name!r}")
        self.classifier = nn.Linear(spec.feature_channels, spec.num_classes)

    def feature_shape(self) -> tuple[int, int, int]:
        with torch.no_grad():
            was_training = self.training
            self.eval()
            out = self.trunk(torch.zeros(1, self.spec.channels, self.spec.height, self.spec.width))
            self.train(was_training)
        return tuple(out.shape[1:])

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.spec.channels, self.spec.height, self.spec.width)
        return self.classifier(self.trunk(x).mean(dim=(2, 3)))

    def features(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _check_input(x, self.spec.channels, self.spec.height, self.spec.width)
        fmap = self.trunk(x)
        return fmap, fmap.mean(dim=(2, 3))


@torch.no_grad()
def forward_generator(net: Generator, x: Tensor) -> Tensor:
    """Inference-mode translation of a batch (or a single C x H x W image)."""
    single = x.dim() == 3
    if single:
        x = x.unsqueeze(0)
    net.eval()
    out = net(x)
    return out[0] if single else out


@torch.no_grad()
def forward_siamese(net: SiaNet, x: Tensor) -> Tensor:
    single = x.dim() == 3
    if single:
        x = x.unsqueeze(0)
    net.eval()
    out = net(x)
    return out[0] if single else out


def forward_backbone(net: ReidBackbone, x: Tensor, mode: str = "feature"):
    """``mode='train'`` returns logits (with grad); ``mode='feature'`` returns
    ``(feature_map, pooled_vector)`` in inference mode."""
    if mode == "train":
        net.train()
        return net(x)
    if mode == "feature":
        if not getattr(net, "initialized", False):
            raise RuntimeError("feature extraction needs trained or loaded backbone parameters")
        net.eval()
        with torch.no_grad():
            return net.features(x)
    raise ValueError(f"unknown mode {mode!r}")


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def save_network(net: nn.Module, path: str | Path, step: int, config: dict | None = None) -> Path:
    """Write ``<path>.npz`` (named arrays) and ``<path>.json`` (sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    with open(path.with_suffix(".npz"), "wb") as fh:
        np.savez(fh, **arrays)
    sidecar = {
        "version": CHECKPOINT_VERSION,
        "network": type(net).__name__,
        "spec": asdict(net.spec),
        "spec_hash": spec_hash(net.spec),
        "step": step,
        "config": config or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def read_sidecar(path: str | Path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())


def load_network(net: nn.Module, path: str | Path) -> dict:
    """Load arrays into ``net`` after checking the sidecar; returns the sidecar."""
    path = Path(path)
    if not path.with_suffix(".npz").exists():
        raise FileNotFoundError(f"no checkpoint at {path.with_suffix('.npz')}")
    sidecar = read_sidecar(path)
    if sidecar.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {sidecar.get('version')} in {path}")
    if sidecar["spec_hash"] != spec_hash(net.spec):
        raise ValueError(
            f"checkpoint {path} was written for spec {sidecar['spec']} (hash {sidecar['spec_hash']}), "
            f"not {asdict(net.spec)} (hash {spec_hash(net.spec)})"
        )
    with np.load(path.with_suffix(".npz")) as data:
        state = {k: torch.from_numpy(data[k]) for k in data.files}
    net.load_state_dict(state)
    net.initialized = True
    return sidecar


def parameter_digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()
