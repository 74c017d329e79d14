"""Alternating SPGAN optimisation, checkpointing and dataset translation.

Each step updates three groups in a fixed order while the other two are
frozen: the generators (G, F), the discriminators (D_T, D_S), then SiaNet.
"""
from __future__ import annotations

import copy
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from torch import Tensor, nn

from .dataset import (
    DatasetManifest,
    Record,
    decode_image,
    encode_image,
    epoch_length,
    epoch_order,
    load_images,
    pair_batch_from_translations,
    write_manifest_csv,
)
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss_S,
    adversarial_loss_T,
    contrastive_loss,
    cycle_loss,
    identity_loss,
    spgan_objective,
    total_spgan_loss,
)
from .networks import (
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    PatchDiscriminator,
    SiaNet,
    SiaNetSpec,
    load_network,
    read_sidecar,
    save_network,
)

log = logging.getLogger(__name__)

NETWORKS = ("G", "F", "D_T", "D_S", "SiaNet")
LOSS_LOG = "losses.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.0002
    epochs: int = 5
    batch_size: int = 1
    seed: int = 0
    history_buffer_size: int = 50
    betas: tuple[float, float] = (0.5, 0.999)
    height: int = 128
    width: int = 64
    generator_filters: int = 32
    n_res_blocks: int = 4
    discriminator_filters: int = 32
    discriminator_layers: int = 3

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("SPGAN trains with batch size 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            height=self.height, width=self.width, base_filters=self.generator_filters, n_res_blocks=self.n_res_blocks
        )

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(
            height=self.height,
            width=self.width,
            base_filters=self.discriminator_filters,
            n_layers=self.discriminator_layers,
        )

    def siamese_spec(self) -> SiaNetSpec:
        return SiaNetSpec(height=self.height, width=self.width)


class ImageHistory:
    """Pool of past generated images; once full, each query returns a stored
    image with probability 1/2 and replaces it with the new one."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.images: list[Tensor] = []

    def query(self, image: Tensor) -> Tensor:
        image = image.detach()
        if self.size == 0:
            return image
        if len(self.images) < self.size:
            self.images.append(image.clone())
            return image
        if self.rng.random() < 0.5:
            k = int(self.rng.integers(self.size))
            old = self.images[k]
            self.images[k] = image.clone()
            return old
        return image


def _set_trainable(nets, flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def _check_finite(name: str, value: Tensor) -> None:
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"non-finite loss term {name}={float(value)}")


class SPGANTrainer:
    """Owns the five networks, their optimisers and the fake-image pools."""

    def __init__(self, config: TrainConfig):
        self.config = config
        torch.manual_seed(config.seed)
        self.G = Generator(config.generator_spec())
        self.F = Generator(config.generator_spec())
        self.D_T = PatchDiscriminator(config.discriminator_spec())
        self.D_S = PatchDiscriminator(config.discriminator_spec())
        self.sia = SiaNet(config.siamese_spec())
        adam = dict(lr=config.learning_rate, betas=config.betas, fused=True)
        self.opt_gen = torch.optim.Adam([*self.G.parameters(), *self.F.parameters()], **adam)
        self.opt_disc = torch.optim.Adam([*self.D_T.parameters(), *self.D_S.parameters()], **adam)
        self.opt_sia = torch.optim.Adam(self.sia.parameters(), **adam)
        self.rng = np.random.default_rng([config.seed, 0x9001])
        self.pool_T = ImageHistory(config.history_buffer_size, self.rng)
        self.pool_S = ImageHistory(config.history_buffer_size, self.rng)
        self.step = 0
        for net in self.networks.values():
            net.train()

    @property
    def networks(self) -> dict[str, nn.Module]:
        return {"G": self.G, "F": self.F, "D_T": self.D_T, "D_S": self.D_S, "SiaNet": self.sia}

    def _embed_pairs(self, batch):
        a, b, labels = batch.stacked()
        a = a.squeeze(1) if a.dim() == 5 else a
        b = b.squeeze(1) if b.dim() == 5 else b
        return self.sia(a), self.sia(b), labels

    def update_generators(self, x_S: Tensor, x_T: Tensor):
        """Sub-update 1: G and F on adversarial + cycle + identity + contrastive terms."""
        w = self.config.weights
        _set_trainable([self.D_T, self.D_S, self.sia], False)
        _set_trainable([self.G, self.F], True)
        fake_T = self.G(x_S)
        fake_S = self.F(x_T)
        adv_T = adversarial_loss_T(None, self.D_T(fake_T), "generator")
        adv_S = adversarial_loss_S(None, self.D_S(fake_S), "generator")
        cyc = cycle_loss(x_S, self.F(fake_T), x_T, self.G(fake_S))
        ide = identity_loss(x_S, self.F(x_S), x_T, self.G(x_T))
        batch = pair_batch_from_translations(x_S[0], x_T[0], fake_T[0], fake_S[0])
        if w.lambda3 > 0:
            e1, e2, labels = self._embed_pairs(batch)
            con = contrastive_loss(labels, e1, e2, w.margin_m)
            total = spgan_objective(adv_T, adv_S, cyc, ide, con, w)
        else:
            # contrastive term only reported; the generator graph never sees it
            with torch.no_grad():
                e1, e2, labels = self._embed_pairs(batch)
                con = contrastive_loss(labels, e1, e2, w.margin_m)
            total = adv_T + adv_S + w.lambda1 * cyc + w.lambda2 * ide
        report = total_spgan_loss(dict(adv_T=adv_T, adv_S=adv_S, cyc=cyc, ide=ide, con=con), w)
        self.opt_gen.zero_grad(set_to_none=True)
        total.backward()
        self.opt_gen.step()
        _set_trainable([self.D_T, self.D_S, self.sia], True)
        return report, fake_T.detach(), fake_S.detach()

    def update_discriminators(self, x_S: Tensor, x_T: Tensor, fake_T: Tensor, fake_S: Tensor):
        """Sub-update 2: D_T and D_S on history-buffered fakes."""
        _set_trainable([self.G, self.F, self.sia], False)
        pooled_T = self.pool_T.query(fake_T)
        pooled_S = self.pool_S.query(fake_S)
        d_T = adversarial_loss_T(self.D_T(x_T), self.D_T(pooled_T), "discriminator")
        d_S = adversarial_loss_S(self.D_S(x_S), self.D_S(pooled_S), "discriminator")
        _check_finite("d_T", d_T)
        _check_finite("d_S", d_S)
        self.opt_disc.zero_grad(set_to_none=True)
        (d_T + d_S).backward()
        self.opt_disc.step()
        _set_trainable([self.G, self.F, self.sia], True)
        return d_T.item(), d_S.item()

    def update_siamese(self, x_S: Tensor, x_T: Tensor, fake_T: Tensor, fake_S: Tensor) -> float:
        """Sub-update 3: SiaNet on the plain contrastive loss of this step's pairs."""
        _set_trainable([self.G, self.F, self.D_T, self.D_S], False)
        batch = pair_batch_from_translations(x_S[0], x_T[0], fake_T[0], fake_S[0])
        e1, e2, labels = self._embed_pairs(batch)
        loss = contrastive_loss(labels, e1, e2, self.config.weights.margin_m)
        _check_finite("sia", loss)
        self.opt_sia.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_sia.step()
        _set_trainable([self.G, self.F, self.D_T, self.D_S], True)
        return loss.item()

    def train_step(self, x_S: Tensor, x_T: Tensor) -> tuple[LossReport, dict]:
        """One alternating step on a single source and a single target image."""
        if x_S.dim() == 3:
            x_S, x_T = x_S.unsqueeze(0), x_T.unsqueeze(0)
        try:
            report, fake_T, fake_S = self.update_generators(x_S, x_T)
            d_T, d_S = self.update_discriminators(x_S, x_T, fake_T, fake_S)
            sia = self.update_siamese(x_S, x_T, fake_T, fake_S)
        except FloatingPointError as exc:
            raise FloatingPointError(f"step {self.step + 1}: {exc}") from exc
        self.step += 1
        return report, {"d_T": d_T, "d_S": d_S, "sia": sia}

    # checkpointing

    def save(self, ckpt_dir: str | Path) -> Path:
        ckpt_dir = Path(ckpt_dir)
        snapshot = config_to_dict(self.config)
        try:
            for name, net in self.networks.items():
                save_network(net, ckpt_dir / name, self.step, snapshot)
            torch.save(
                {
                    "step": self.step,
                    "opt_gen": self.opt_gen.state_dict(),
                    "opt_disc": self.opt_disc.state_dict(),
                    "opt_sia": self.opt_sia.state_dict(),
                    "rng": self.rng.bit_generator.state,
                    "pool_T": self.pool_T.images,
                    "pool_S": self.pool_S.images,
                },
                ckpt_dir / "trainer_state.pt",
            )
        except OSError:
            shutil.rmtree(ckpt_dir, ignore_errors=True)
            raise
        return ckpt_dir

    @classmethod
    def load(cls, ckpt_dir: str | Path, config: TrainConfig | None = None) -> SPGANTrainer:
        ckpt_dir = Path(ckpt_dir)
        if config is None:
            config = TrainConfig.from_dict(read_sidecar(ckpt_dir / "G")["config"])
        trainer = cls(config)
        for name, net in trainer.networks.items():
            load_network(net, ckpt_dir / name)
            net.train()
        state = torch.load(ckpt_dir / "trainer_state.pt", weights_only=False)
        trainer.opt_gen.load_state_dict(state["opt_gen"])
        trainer.opt_disc.load_state_dict(state["opt_disc"])
        trainer.opt_sia.load_state_dict(state["opt_sia"])
        trainer.rng.bit_generator.state = state["rng"]
        trainer.pool_T.images = list(state["pool_T"])
        trainer.pool_S.images = list(state["pool_S"])
        trainer.step = state["step"]
        return trainer


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["betas"] = list(d["betas"])
    return d


def _latest(run_dir: Path) -> Path | None:
    pointer = run_dir / "checkpoints" / "latest.txt"
    if not pointer.exists():
        return None
    return run_dir / "checkpoints" / pointer.read_text().strip()


def _checkpoint(trainer: SPGANTrainer, run_dir: Path, tag: str) -> Path:
    ckpt = trainer.save(run_dir / "checkpoints" / tag)
    (run_dir / "checkpoints" / "latest.txt").write_text(tag)
    return ckpt


def _truncate_log(path: Path, last_step: int) -> None:
    if not path.exists():
        return
    lines = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["step"] <= last_step]
    path.write_text("".join(ln + "\n" for ln in lines))


def run_training(
    source: DatasetManifest,
    target: DatasetManifest,
    config: TrainConfig,
    run_dir: str | Path,
    resume: bool = True,
    stop_at_step: int | None = None,
) -> SPGANTrainer:
    """Train for ``config.epochs`` epochs of ``max(|S|, |T|)`` steps each.

    Writes ``losses.jsonl``, a checkpoint at every epoch end and a ``final``
    checkpoint.  With ``resume`` the run continues from the latest checkpoint
    in ``run_dir``.  ``stop_at_step`` checkpoints and returns early, which is
    how an interruption is simulated.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    # only image tensors reach the trainer; identity columns are never read here
    images_S = load_images(source, config.height, config.width)
    images_T = load_images(target, config.height, config.width)
    n_S, n_T = len(images_S), len(images_T)
    if not n_S or not n_T:
        raise ValueError("both manifests must be non-empty")
    steps_per_epoch = epoch_length(n_S, n_T)
    total_steps = config.epochs * steps_per_epoch
    log_path = run_dir / LOSS_LOG

    latest = _latest(run_dir) if resume else None
    if latest is not None:
        trainer = SPGANTrainer.load(latest, config)
        log.info("resuming from %s at step %d", latest, trainer.step)
    else:
        trainer = SPGANTrainer(config)
    _truncate_log(log_path, trainer.step)

    order_seed = int(np.random.default_rng([config.seed, 0x5A3]).integers(2**31))
    order, order_epoch = None, -1
    with open(log_path, "a") as fh:
        while trainer.step < total_steps:
            epoch, k = divmod(trainer.step, steps_per_epoch)
            if epoch != order_epoch:
                order, order_epoch = epoch_order(n_S, n_T, order_seed, epoch), epoch
            i_s, i_t = order[k]
            report, extra = trainer.train_step(images_S[i_s], images_T[i_t])
            fh.write(json.dumps({"step": trainer.step, **report.as_dict(), **extra}) + "\n")
            fh.flush()
            if trainer.step % steps_per_epoch == 0 and trainer.step < total_steps:
                _checkpoint(trainer, run_dir, f"epoch_{trainer.step // steps_per_epoch:03d}")
            if stop_at_step is not None and trainer.step >= stop_at_step and trainer.step < total_steps:
                _checkpoint(trainer, run_dir, f"step_{trainer.step:06d}")
                return trainer
    _checkpoint(trainer, run_dir, "final")
    return trainer


def read_loss_log(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / LOSS_LOG
    return [json.loads(ln) for ln in path.read_text().splitlines() if ln]


def load_generator(ckpt_dir: str | Path, direction: Literal["source_to_target", "target_to_source"],
                   spec: GeneratorSpec | None = None) -> Generator:
    """Generator G (source->target) or F (target->source) from a checkpoint directory."""
    name = {"source_to_target": "G", "target_to_source": "F"}.get(direction)
    if name is None:
        raise ValueError(f"unknown direction {direction!r}")
    path = Path(ckpt_dir) / name
    if spec is None:
        spec = GeneratorSpec(**read_sidecar(path)["spec"])
    net = Generator(spec)
    load_network(net, path)
    net.eval()
    return net


@torch.no_grad()
def translate_dataset(
    generator: str | Path | Generator,
    direction: Literal["source_to_target", "target_to_source"],
    manifest: DatasetManifest,
    out_dir: str | Path,
    spec: GeneratorSpec | None = None,
) -> DatasetManifest:
    """Translate every record, keeping filenames and identity/camera labels."""
    if isinstance(generator, Generator):
        net = copy.deepcopy(generator).eval()
    else:
        net = load_generator(generator, direction, spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for r in manifest.records:
        x = decode_image(r.path, net.spec.height, net.spec.width)
        dst = out_dir / Path(r.path).name
        encode_image(net(x.unsqueeze(0))[0], dst)
        records.append(Record(dst, r.identity, r.camera))
    out = DatasetManifest(out_dir, tuple(records), manifest.domain_tag)
    write_manifest_csv(out)
    return out
