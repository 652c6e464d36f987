"""Masked-autoencoder pretraining loop with saliency-guided dynamic masking."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, params_hash, save_checkpoint
from .masking import (
    DEFAULT_EPSILON,
    DEFAULT_STATIC_GAMMA,
    SHUFFLE_STREAM,
    STRATEGIES,
    mask_count,
    plan_from_saliency,
    saliency,
    schedule_gamma,
)
from .model import ModelConfig, forward, init_params
from .optim import AdamState, adamw_step, lr_at
from .patchify import patchify_knowledge
from .raster_io import Raster
from .spectral import DEFAULT_KINDS, BandMap, compute_knowledge_tensor
from .synthetic import load_corpus

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, seed: int, image_ids):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (seed {seed}, images {list(image_ids)})"
        )
        self.epoch, self.batch, self.seed, self.image_ids = epoch, batch, seed, list(image_ids)


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 50
    base_lr: float = 1e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    warmup_epochs: int = 1
    warmup_lr: float = 1e-6
    batch_size: int = 16
    mask_ratio: float = 0.75
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    strategy: str = "ssdtm"
    static_gamma: float = DEFAULT_STATIC_GAMMA
    grad_clip: float | None = None
    dataset: str | None = None
    checkpoint: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs must satisfy 0 <= warmup_epochs < total_epochs")
        if not 0 < self.mask_ratio < 1:
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.base_lr < 0 or self.warmup_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 < self.static_gamma <= 1:
            raise ValueError("static_gamma must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(float(b) for b in d["betas"])
        return cls(**d)


def desk_profile(**overrides) -> tuple[TrainConfig, ModelConfig]:
    return TrainConfig(**overrides), ModelConfig()


def full_scale_profile(**overrides) -> tuple[TrainConfig, ModelConfig]:
    """Full-scale pretraining settings (1000 epochs, batch 900, 120 px): runnable, but slow on a CPU."""
    train = TrainConfig(
        total_epochs=1000, base_lr=1e-4, weight_decay=0.05, betas=(0.9, 0.95),
        warmup_epochs=20, warmup_lr=1e-6, batch_size=900, mask_ratio=0.5,
    )
    return replace(train, **overrides), ModelConfig(image_size=120, patch_size=8)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    gamma: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    CSV_COLUMNS = ("epoch", "mean_loss", "lr", "gamma", "seconds")

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.records]

    def values(self) -> list[tuple]:
        """Everything but wall time: the part that is bit-reproducible."""
        return [(r.epoch, r.mean_loss, r.lr, r.gamma) for r in self.records]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, repr(r.mean_loss), repr(r.lr), repr(r.gamma), f"{r.seconds:.3f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainLog":
        rows = list(csv.DictReader(Path(path).read_text(encoding="utf-8").splitlines()))
        return cls([
            EpochRecord(int(r["epoch"]), float(r["mean_loss"]), float(r["lr"]),
                        float(r["gamma"]), float(r["seconds"]))
            for r in rows
        ])


@dataclass
class Dataset:
    """Images stacked as (N, C, H, W) float32 plus per-image normalized saliency."""

    images: np.ndarray
    q_norm: np.ndarray  # (N, L)
    q_raw: np.ndarray
    bands: tuple = ()

    def __len__(self):
        return self.images.shape[0]


def prepare_dataset(
    source, patch_size: int, epsilon: float = DEFAULT_EPSILON,
    band_map: BandMap | None = None, kinds=DEFAULT_KINDS,
) -> Dataset:
    if isinstance(source, Dataset):
        return source
    if isinstance(source, (str, Path)):
        source = load_corpus(source)
    rasters: Sequence[Raster] = list(source)
    if not rasters:
        raise ValueError("dataset is empty")
    q_norm, q_raw = [], []
    for r in rasters:
        bm = band_map or BandMap.from_names(r.bands)
        kt = compute_knowledge_tensor(r, kinds, bm)
        sal = saliency(patchify_knowledge(kt, patch_size), epsilon)
        q_norm.append(sal.q_norm)
        q_raw.append(sal.q_raw)
    images = np.stack([r.data for r in rasters]).astype(np.float32)
    return Dataset(images, np.stack(q_norm), np.stack(q_raw), rasters[0].bands)


def _shuffle(seed: int, epoch: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), int(epoch)], spawn_key=(SHUFFLE_STREAM,))
    return np.random.Generator(np.random.Philox(ss)).permutation(n)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    adam: AdamState
    log: TrainLog
    init_hash: str
    model: ModelConfig
    config: TrainConfig
    masks: list[np.ndarray] | None = None  # per epoch, (N, n_masked) in image order
    checkpoint_path: Path | None = None

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            model=self.model, params=self.params, train=self.config.to_dict(),
            epoch=len(self.log), step=self.adam.step, seed=self.config.seed, adam=self.adam,
        )


def pretrain(
    config: TrainConfig,
    dataset=None,
    model: ModelConfig | None = None,
    band_map: BandMap | None = None,
    record_masks: bool = False,
    init: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Run the full pretraining schedule and return parameters plus the epoch log."""
    model = model or ModelConfig()
    if dataset is None:
        if config.dataset is None:
            raise ValueError("no dataset given")
        dataset = config.dataset
    data = prepare_dataset(dataset, model.patch_size, config.epsilon, band_map)
    N, C, H, W = data.images.shape
    if (C, H) != (model.channels, model.image_size) or H != W:
        raise ValueError(f"dataset images {C}x{H}x{W} do not match model config "
                         f"{model.channels}x{model.image_size}x{model.image_size}")
    L = model.num_patches
    n_masked = mask_count(config.mask_ratio, L)
    if n_masked < 1 or n_masked >= L:
        raise ValueError(f"mask ratio {config.mask_ratio} masks {n_masked} of {L} patches")

    if init is not None:
        params = {k: ad.Tensor(np.array(v, dtype=np.float32), requires_grad=True, name=k)
                  for k, v in init.items()}
    else:
        params = init_params(model, config.seed)
    init_hash = params_hash(params)
    adam = AdamState()
    steps_per_epoch = math.ceil(N / config.batch_size)
    E = config.total_epochs
    trainlog = TrainLog()
    masks: list[np.ndarray] | None = [] if record_masks else None
    step = 0

    for e in range(1, E + 1):
        t0 = time.perf_counter()
        gamma = schedule_gamma(e, E)
        order = _shuffle(config.seed, e, N)
        epoch_lr = lr_at(step, config, steps_per_epoch)
        total = 0.0
        epoch_masks = np.zeros((N, n_masked), dtype=np.int64) if record_masks else None
        for b in range(steps_per_epoch):
            ids = order[b * config.batch_size:(b + 1) * config.batch_size]
            plans = [
                plan_from_saliency(
                    data.q_norm[i], e, E, config.mask_ratio, model.patch_size, H, W,
                    rng_seed=config.seed, image_id=int(i), strategy=config.strategy,
                    static_gamma=config.static_gamma,
                )
                for i in ids
            ]
            if epoch_masks is not None:
                for i, p in zip(ids, plans):
                    epoch_masks[i] = p.masked
            loss, recon = forward(data.images[ids], plans, params, model)
            assert recon.h_e.shape[1] == L - n_masked
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLossError(e, b, config.seed, ids)
            ad.backward(loss)
            grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data)
                     for k, p in params.items()}
            if config.grad_clip:
                norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
                if norm > config.grad_clip:
                    grads = {k: g * (config.grad_clip / norm) for k, g in grads.items()}
            lr = lr_at(step, config, steps_per_epoch)
            new, adam = adamw_step(
                {k: p.data for k, p in params.items()}, grads, adam, lr,
                config.betas, config.weight_decay,
            )
            for k, p in params.items():
                p.data = new[k]
                p.grad = None
            total += value * len(ids)
            step += 1
        mean_loss = total / N
        if not math.isfinite(mean_loss):
            raise NonFiniteLossError(e, -1, config.seed, [])
        trainlog.records.append(
            EpochRecord(e, mean_loss, epoch_lr, gamma, time.perf_counter() - t0)
        )
        if masks is not None:
            masks.append(epoch_masks)
        log.info("epoch %d/%d loss %.6f lr %.3g gamma %.3f", e, E, mean_loss, epoch_lr, gamma)
        if config.checkpoint and config.checkpoint_every and e % config.checkpoint_every == 0 and e < E:
            save_checkpoint(_snapshot(model, params, config, e, adam), f"{config.checkpoint}-e{e:04d}")

    result = TrainResult(
        params={k: p.data for k, p in params.items()}, adam=adam, log=trainlog,
        init_hash=init_hash, model=model, config=config, masks=masks,
    )
    if config.checkpoint:
        result.checkpoint_path = save_checkpoint(result.checkpoint(), config.checkpoint)
    return result


def _snapshot(model, params, config, epoch, adam) -> Checkpoint:
    return Checkpoint(
        model=model, params={k: p.data for k, p in params.items()}, train=config.to_dict(),
        epoch=epoch, step=adam.step, seed=config.seed, adam=adam,
    )
