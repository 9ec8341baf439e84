"""Training loops: GAN-CLS for the conditional GAN, reconstruction for AE and BiDNN."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, InputError
from .models import (AEConfig, BiDNNConfig, DiscriminatorConfig, GeneratorConfig, ModelBundle, ae_forward,
                     bidnn_forward, build_ae, build_bidnn, build_cgan, discriminator_forward, generator_forward)
from .nn import OptimConfig, adam_step, zero_grads
from .tensor import Tensor, Tape, bce_loss, get_dtype, mse_loss, no_record, scale

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    gen_updates_per_disc: int = 4
    seed: int = 0
    optimizer: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimConfig(**self.optimizer)
        for name in ("epochs", "batch_size", "gen_updates_per_disc"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class TrainRecord:
    step: int
    d_loss: float
    g_loss: float | None
    d_count: int
    g_count: int


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    epoch_d_loss: list = field(default_factory=list)
    epoch_g_loss: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "d_loss", "g_loss", "d_count", "g_count"])
            for r in self.records:
                writer.writerow([r.step, repr(r.d_loss), "" if r.g_loss is None else repr(r.g_loss),
                                 r.d_count, r.g_count])

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# GAN-CLS


def discriminator_loss(s_real: Tensor, s_wrong: Tensor, s_fake: Tensor) -> Tensor:
    """-[log s_real + ½(log(1 - s_wrong) + log(1 - s_fake))], each term batch-averaged."""
    fakes = bce_loss(s_wrong, 0) + bce_loss(s_fake, 0)
    return bce_loss(s_real, 1) + scale(fakes, 0.5)


def generator_loss(s_fake: Tensor) -> Tensor:
    return bce_loss(s_fake, 1)


def gan_cls_losses(s_real, s_wrong, s_fake) -> tuple[Tensor, Tensor]:
    as_t = [s if isinstance(s, Tensor) else Tensor(np.atleast_1d(s)) for s in (s_real, s_wrong, s_fake)]
    return discriminator_loss(*as_t), generator_loss(as_t[2])


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation with no fixed point (rejection sampling)."""
    if n < 2:
        raise InputError("mismatched pairs need at least 2 segments")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def sample_mismatched(batch, rng: np.random.Generator) -> list[tuple]:
    """Pair each segment's text with the image of a uniformly chosen different segment."""
    perm = derangement(len(batch), rng)
    return [(batch[j].representative, seg.phi) for seg, j in zip(batch, perm)]


def _check_segments(dataset, need_image=False, need_visual=False):
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    for seg in dataset:
        if seg.phi is None:
            raise DataError(f"segment {seg.id} has no text embedding")
        if need_image and seg.representative is None:
            raise DataError(f"segment {seg.id} has no representative image")
        if need_visual and seg.visual_feature is None:
            raise DataError(f"segment {seg.id} has no visual feature")


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i:i + size] for i in range(0, len(order), size)]
    # a trailing singleton cannot be batch-normalized
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train_cgan(dataset, gen_cfg: GeneratorConfig | None = None, disc_cfg: DiscriminatorConfig | None = None,
               train_cfg: TrainConfig | None = None, bundle: ModelBundle | None = None,
               progress=None) -> tuple[ModelBundle, TrainLog]:
    """Matching-aware conditional GAN training.

    Each cycle is one discriminator update on {real image, text},
    {mismatched image, text} and {generated image, text} batches, followed by
    ``gen_updates_per_disc`` generator updates on fresh noise and fresh text
    minibatches. An epoch is one pass of discriminator batches over the corpus.
    """
    train_cfg = train_cfg or TrainConfig()
    _check_segments(dataset, need_image=True)
    if len(dataset) < 2:
        raise DataError("GAN-CLS training needs at least 2 segments")
    if bundle is None:
        bundle = build_cgan(gen_cfg, disc_cfg, train_cfg.seed)
    bundle.require("cgan")
    gcfg: GeneratorConfig = bundle.configs["generator"]
    dtype = get_dtype()
    images = np.stack([s.representative for s in dataset]).astype(dtype)
    phis = np.stack([s.phi for s in dataset]).astype(dtype)
    if phis.shape[1] != gcfg.text_dim:
        raise DataError(f"text embeddings have {phis.shape[1]} dims, model expects {gcfg.text_dim}")
    if images.shape[1:] != (gcfg.channels, gcfg.image_size, gcfg.image_size):
        raise DataError(f"images have shape {images.shape[1:]}, model expects "
                        f"{(gcfg.channels, gcfg.image_size, gcfg.image_size)}")

    rng = np.random.default_rng(train_cfg.seed)
    gen, disc = bundle.params["generator"], bundle.params["discriminator"]
    opt = train_cfg.optimizer
    ratio = train_cfg.gen_updates_per_disc
    n = len(dataset)
    batch = min(train_cfg.batch_size, n)
    log = TrainLog()
    d_count = g_count = 0

    def noise(size):
        return rng.uniform(-1.0, 1.0, size=(size, gcfg.noise_dim)).astype(dtype)

    for epoch in range(train_cfg.epochs):
        start = time.perf_counter()
        d_losses, g_losses = [], []
        for idx in _batches(rng.permutation(n), batch):
            b = len(idx)
            real, phi = images[idx], phis[idx]
            wrong = images[idx[derangement(b, rng)]]
            with no_record():
                fake = generator_forward(bundle, noise(b), phi, "train").data
            with Tape() as tape:
                s_real, _ = discriminator_forward(bundle, real, phi, "train")
                s_wrong, _ = discriminator_forward(bundle, wrong, phi, "train", update_stats=False)
                s_fake, _ = discriminator_forward(bundle, fake, phi, "train", update_stats=False)
                d_loss = discriminator_loss(s_real, s_wrong, s_fake)
            tape.backward(d_loss)
            adam_step(disc, opt)
            d_count += 1

            cycle_g = []
            for _ in range(ratio):
                gidx = rng.choice(n, size=batch, replace=False)
                with disc.frozen(), Tape() as tape:
                    fake = generator_forward(bundle, noise(batch), phis[gidx], "train")
                    s_fake, _ = discriminator_forward(bundle, fake, phis[gidx], "train", update_stats=False)
                    g_loss = generator_loss(s_fake)
                tape.backward(g_loss)
                adam_step(gen, opt)
                g_count += 1
                cycle_g.append(g_loss.item())
            zero_grads(disc)
            record = TrainRecord(d_count, d_loss.item(), float(np.mean(cycle_g)), d_count, g_count)
            if not (math.isfinite(record.d_loss) and math.isfinite(record.g_loss)):
                raise FloatingPointError(f"non-finite loss at step {d_count}")
            log.records.append(record)
            d_losses.append(record.d_loss)
            g_losses.append(record.g_loss)
        log.epoch_seconds.append(time.perf_counter() - start)
        log.epoch_d_loss.append(float(np.mean(d_losses)))
        log.epoch_g_loss.append(float(np.mean(g_losses)))
        bundle.epochs += 1
        if progress is not None:
            progress(epoch, log)
    return bundle, log


# ---------------------------------------------------------------------------
# reconstruction baselines


def _modalities(dataset, text_dim: int, visual_dim: int):
    _check_segments(dataset, need_visual=True)
    dtype = get_dtype()
    text = np.stack([s.phi for s in dataset]).astype(dtype)
    visual = np.stack([s.visual_feature for s in dataset]).astype(dtype)
    if text.shape[1] != text_dim or visual.shape[1] != visual_dim:
        raise DataError(f"data dims text={text.shape[1]} visual={visual.shape[1]} do not match model "
                        f"text={text_dim} visual={visual_dim}")
    return text, visual


def _reconstruction_loop(bundle, loss_fn, text, visual, train_cfg: TrainConfig, progress=None, rng=None):
    rng = rng or np.random.default_rng(train_cfg.seed)
    params = next(iter(bundle.params.values()))
    log = TrainLog()
    step = 0
    n = len(text)
    for epoch in range(train_cfg.epochs):
        start = time.perf_counter()
        losses = []
        for idx in _batches(rng.permutation(n), min(train_cfg.batch_size, n)):
            with Tape() as tape:
                loss = loss_fn(text[idx], visual[idx], rng)
            tape.backward(loss)
            adam_step(params, train_cfg.optimizer)
            step += 1
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at step {step}")
            log.records.append(TrainRecord(step, value, None, step, 0))
            losses.append(value)
        log.epoch_seconds.append(time.perf_counter() - start)
        log.epoch_d_loss.append(float(np.mean(losses)))
        bundle.epochs += 1
        if progress is not None:
            progress(epoch, log)
    return log


def train_ae(dataset, cfg: AEConfig | None = None, train_cfg: TrainConfig | None = None,
             progress=None) -> tuple[ModelBundle, TrainLog]:
    """Minimize summed per-modality mean squared reconstruction error."""
    cfg = cfg or AEConfig()
    train_cfg = train_cfg or TrainConfig()
    text, visual = _modalities(dataset, cfg.text_dim, cfg.visual_dim)
    bundle = build_ae(cfg, train_cfg.seed)

    def loss_fn(t, v, rng):
        t_in, v_in = t, v
        if cfg.modality_dropout > 0:
            drop = rng.random(len(t)) < cfg.modality_dropout
            which = rng.random(len(t)) < 0.5
            t_in = np.where((drop & which)[:, None], 0, t).astype(t.dtype)
            v_in = np.where((drop & ~which)[:, None], 0, v).astype(v.dtype)
        t_rec, v_rec, _ = ae_forward(bundle, t_in, v_in)
        return mse_loss(t_rec, t) + mse_loss(v_rec, v)

    return bundle, _reconstruction_loop(bundle, loss_fn, text, visual, train_cfg, progress)


def train_bidnn(dataset, cfg: BiDNNConfig | None = None, train_cfg: TrainConfig | None = None,
                progress=None) -> tuple[ModelBundle, TrainLog]:
    """Minimize MSE(text -> visual) + MSE(visual -> text) through the tied central matrix."""
    cfg = cfg or BiDNNConfig()
    train_cfg = train_cfg or TrainConfig()
    text, visual = _modalities(dataset, cfg.text_dim, cfg.visual_dim)
    bundle = build_bidnn(cfg, train_cfg.seed)

    def loss_fn(t, v, rng):
        out, _ = bidnn_forward(bundle, t, v, "both")
        return mse_loss(out["text_to_visual"], v) + mse_loss(out["visual_to_text"], t)

    return bundle, _reconstruction_loop(bundle, loss_fn, text, visual, train_cfg, progress)


def train(kind: str, dataset, configs: dict, train_cfg: TrainConfig, progress=None):
    if kind == "cgan":
        return train_cgan(dataset, configs.get("generator"), configs.get("discriminator"), train_cfg,
                          progress=progress)
    if kind == "ae":
        return train_ae(dataset, configs.get("ae"), train_cfg, progress)
    if kind == "bidnn":
        return train_bidnn(dataset, configs.get("bidnn"), train_cfg, progress)
    raise ConfigError(f"unknown model kind {kind!r}")
