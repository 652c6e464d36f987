"""Desk-scale studies: saliency distributions, curriculum traces, ablations, mask-ratio sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .autodiff import no_grad
from .checkpoint import params_hash
from .masking import (
    DEFAULT_EPSILON,
    MaskPlan,
    draw_noise,
    dynamic_scores,
    mask_count,
    plan_from_saliency,
    saliency,
)
from .model import ModelConfig, forward, params_like
from .patchify import patchify_knowledge
from .raster_io import Raster, save_raster
from .spectral import DEFAULT_KINDS, BandMap, compute_knowledge_tensor
from .synthetic import load_corpus
from .trainer import TrainConfig, prepare_dataset, pretrain

DEFAULT_SENTINEL = -1.0


# ---------------------------------------------------------------- statistics


def skewness(x) -> float:
    """Adjusted Fisher-Pearson skewness; 0 for zero-variance or tiny samples."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 3 or np.all(x == x[0]):
        return 0.0
    return float(stats.skew(x, bias=False))


def _rank_rows(x: np.ndarray) -> np.ndarray:
    return stats.rankdata(x, method="average", axis=-1)


def spearman(x, y) -> float | np.ndarray:
    """Spearman correlation with average ranks for ties; 0 when either side is constant.

    Rows of 2-D inputs are correlated independently.
    """
    rx = _rank_rows(np.asarray(x, dtype=np.float64))
    ry = _rank_rows(np.asarray(y, dtype=np.float64))
    rx = rx - rx.mean(axis=-1, keepdims=True)
    ry = ry - ry.mean(axis=-1, keepdims=True)
    num = (rx * ry).sum(axis=-1)
    den = np.sqrt((rx * rx).sum(axis=-1) * (ry * ry).sum(axis=-1))
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(out) if out.ndim == 0 else out


@dataclass
class DistributionReport:
    edges: list[float]
    counts: list[int]
    mean: float
    std: float
    skewness: float
    n: int
    top_decile_mass: float = 0.0  # share of the total held by the largest 10% of samples
    top_range_fraction: float = 0.0  # share of samples in the top 10% of [min, max]

    def to_dict(self) -> dict:
        return asdict(self)


def distribution(values, bins: int = 100) -> DistributionReport:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = x.size
        edges = np.linspace(lo, lo + 1.0, bins + 1)
    else:
        counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    srt = np.sort(x)[::-1]
    k = max(1, int(math.ceil(0.1 * x.size)))
    total = float(np.abs(x).sum())
    top_mass = float(np.abs(srt[:k]).sum()) / total if total > 0 else 0.0
    top_range = float(np.mean(x >= lo + 0.9 * (hi - lo))) if hi > lo else 1.0
    return DistributionReport(
        edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
        mean=float(x.mean()),
        std=float(x.std()),
        skewness=skewness(x),
        n=int(x.size),
        top_decile_mass=top_mass,
        top_range_fraction=top_range,
    )


# ---------------------------------------------------------------- SSM study


@dataclass
class SSMReport:
    ssm: DistributionReport
    index_values: dict[str, DistributionReport]
    semantic_richness: DistributionReport

    def to_dict(self) -> dict:
        return {
            "ssm": self.ssm.to_dict(),
            "index_values": {k: v.to_dict() for k, v in self.index_values.items()},
            "semantic_richness": self.semantic_richness.to_dict(),
        }


def _rasters(corpus) -> list[Raster]:
    if isinstance(corpus, (str, Path)):
        return load_corpus(corpus)
    return list(corpus)


def ssm_distribution(
    corpus, P: int = 8, epsilon: float = DEFAULT_EPSILON, bins: int = 100,
    band_map: BandMap | None = None, kinds=DEFAULT_KINDS,
) -> SSMReport:
    """Pooled per-patch saliency, raw index values and per-patch summed |index| means."""
    rasters = _rasters(corpus)
    if not rasters:
        raise ValueError("empty corpus")
    q, richness = [], []
    index_values: dict[str, list[np.ndarray]] = {}
    for r in rasters:
        kt = compute_knowledge_tensor(r, kinds, band_map or BandMap.from_names(r.bands))
        sal = saliency(patchify_knowledge(kt, P), epsilon)
        q.append(sal.q_raw)
        richness.append(sal.mu_abs.sum(axis=0))
        for kind, plane in zip(kt.kinds, kt.psi):
            index_values.setdefault(kind.name, []).append(plane.ravel())
    return SSMReport(
        ssm=distribution(np.concatenate(q), bins),
        index_values={k: distribution(np.concatenate(v), bins) for k, v in index_values.items()},
        semantic_richness=distribution(np.concatenate(richness), bins),
    )


# ---------------------------------------------------------------- curriculum


@dataclass
class CurriculumPoint:
    epoch: int
    gamma: float
    spearman_mean: float
    spearman_std: float
    top_decile_masked: float  # fraction of top-10% saliency patches that get masked
    draws: int


def curriculum_trace(
    q_norms, E: int = 10, p_m: float = 0.75, seeds: Sequence[int] = range(1000),
    epochs: Sequence[int] | None = None,
) -> list[CurriculumPoint]:
    """Monte-Carlo Spearman(S, q_norm) per epoch of the schedule.

    ``q_norms`` is one normalized-saliency vector or a sequence of them
    (one per sample image); each (seed, image) pair is one draw.
    """
    q_norms = np.atleast_2d(np.asarray(q_norms, dtype=np.float64))
    if q_norms.size == 0:
        raise ValueError("empty sample")
    epochs = list(range(1, E + 1)) if epochs is None else list(epochs)
    seeds = list(seeds)
    n_img, L = q_norms.shape
    k = mask_count(p_m, L)
    n_top = max(1, int(math.ceil(0.1 * L)))
    top_sets = [np.argsort(-q, kind="stable")[:n_top] for q in q_norms]
    points = []
    for e in epochs:
        gamma = e / E
        rho, top_frac = [], []
        for img, q in enumerate(q_norms):
            noise = np.stack([draw_noise(s, e, img, L) for s in seeds])
            S = dynamic_scores(np.broadcast_to(q, noise.shape), gamma, noise)
            rho.append(spearman(S, np.broadcast_to(q, S.shape)))
            order = np.argsort(-S, axis=1, kind="stable")[:, :k]
            masked = np.zeros_like(S, dtype=bool)
            np.put_along_axis(masked, order, True, axis=1)
            top_frac.append(masked[:, top_sets[img]].mean(axis=1))
        rho = np.concatenate(rho)
        points.append(CurriculumPoint(
            epoch=e, gamma=gamma, spearman_mean=float(rho.mean()), spearman_std=float(rho.std()),
            top_decile_masked=float(np.concatenate(top_frac).mean()), draws=int(rho.size),
        ))
    return points


def corpus_q_norms(corpus, P: int = 8, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    return prepare_dataset(_rasters(corpus), P, epsilon).q_norm


# ---------------------------------------------------------------- ablations


@dataclass
class StrategyRun:
    strategy: str
    epochs: list[int]
    losses: list[float]
    lrs: list[float]
    gammas: list[float]
    init_hash: str
    final_hash: str
    spearman: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


@dataclass
class SweepRow:
    ratio: float
    masked: int
    visible: int
    final_loss: float
    exports: dict[str, str] = field(default_factory=dict)


@dataclass
class ComparisonReport:
    runs: dict[str, StrategyRun] = field(default_factory=dict)
    sweep: list[SweepRow] = field(default_factory=list)

    @property
    def final_losses(self) -> dict[str, float]:
        return {k: r.final_loss for k, r in self.runs.items()}

    def to_dict(self) -> dict:
        return {
            "strategies": {k: asdict(r) | {"final_loss": r.final_loss} for k, r in self.runs.items()},
            "final_losses": self.final_losses,
            "sweep": [asdict(s) for s in self.sweep],
        }

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "epoch", "loss", "lr", "gamma"])
            for name, run in self.runs.items():
                for row in zip(run.epochs, run.losses, run.lrs, run.gammas):
                    w.writerow([name, row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        if self.sweep:
            with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["ratio", "masked", "visible", "final_loss"])
                for s in self.sweep:
                    w.writerow([s.ratio, s.masked, s.visible, repr(s.final_loss)])
        return out / "report.json"


def compare_strategies(
    base: TrainConfig,
    strategies: Sequence[str],
    corpus,
    model: ModelConfig | None = None,
) -> ComparisonReport:
    """Pretrain once per strategy with a shared seed, corpus and initialization."""
    model = model or ModelConfig()
    data = prepare_dataset(corpus if not isinstance(corpus, (str, Path)) else load_corpus(corpus),
                           model.patch_size, base.epsilon)
    report = ComparisonReport()
    for strategy in strategies:
        cfg = replace(base, strategy=strategy, checkpoint=None)
        res = pretrain(cfg, data, model, record_masks=True)
        rho = [float(np.mean(_mask_spearman(data.q_norm, m))) for m in res.masks]
        report.runs[strategy] = StrategyRun(
            strategy=strategy,
            epochs=[r.epoch for r in res.log.records],
            losses=res.log.losses,
            lrs=[r.lr for r in res.log.records],
            gammas=[r.gamma for r in res.log.records],
            init_hash=res.init_hash,
            final_hash=params_hash(res.params),
            spearman=rho,
        )
    return report


def _mask_spearman(q_norm: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """Per image, Spearman between the 0/1 masked indicator and q_norm."""
    ind = np.zeros_like(q_norm)
    np.put_along_axis(ind, masked, 1.0, axis=1)
    return spearman(ind, q_norm)


def mask_overlay_export(raster: Raster, plan: MaskPlan, path, sentinel: float = DEFAULT_SENTINEL) -> Raster:
    """Write ``raster`` with every channel of masked pixels set to ``sentinel``."""
    if plan.binary_mask.shape != (raster.height, raster.width):
        raise ValueError(f"plan mask {plan.binary_mask.shape} vs raster {raster.height}x{raster.width}")
    data = raster.data.copy()
    data[:, plan.binary_mask.astype(bool)] = sentinel
    out = Raster(data, raster.bands)
    if path is not None:
        save_raster(out, path)
    return out


def reconstruct(params, model: ModelConfig, raster: Raster, plan: MaskPlan):
    """(loss, reconstructed raster) for one image under one plan."""
    with no_grad():
        loss, recon = forward(raster.data[None], [plan], params_like(params), model)
    image_hat = recon.image_hat.data[0]
    return float(loss.data), Raster(image_hat.astype(np.float32), raster.bands)


def mask_ratio_sweep(
    base: TrainConfig,
    ratios: Sequence[float],
    corpus,
    model: ModelConfig | None = None,
    out: str | Path | None = None,
    sample_index: int = 0,
    sentinel: float = DEFAULT_SENTINEL,
) -> list[SweepRow]:
    """Train at each mask ratio; export (original, masked, reconstructed) for one sample."""
    model = model or ModelConfig()
    rasters = _rasters(corpus)
    data = prepare_dataset(rasters, model.patch_size, base.epsilon)
    rows = []
    L = model.num_patches
    for ratio in ratios:
        if not 0 < ratio < 1:
            raise ValueError(f"mask ratio {ratio} outside (0, 1)")
        cfg = replace(base, mask_ratio=float(ratio), checkpoint=None)
        res = pretrain(cfg, data, model)
        n = mask_count(ratio, L)
        row = SweepRow(float(ratio), n, L - n, res.log.losses[-1])
        if out is not None:
            d = Path(out) / f"ratio_{int(round(ratio * 100)):02d}"
            d.mkdir(parents=True, exist_ok=True)
            raster = rasters[sample_index]
            plan = plan_from_saliency(
                data.q_norm[sample_index], cfg.total_epochs, cfg.total_epochs, ratio,
                model.patch_size, raster.height, raster.width, rng_seed=cfg.seed,
                image_id=sample_index, strategy=cfg.strategy, static_gamma=cfg.static_gamma,
            )
            _, rec = reconstruct(res.params, model, raster, plan)
            save_raster(raster, d / "original.msr")
            mask_overlay_export(raster, plan, d / "masked.msr", sentinel)
            save_raster(rec, d / "reconstructed.msr")
            (d / "plan.json").write_text(plan.to_json(), encoding="utf-8")
            row.exports = {k: str(d / f"{k}.msr") for k in ("original", "masked", "reconstructed")}
        rows.append(row)
    return rows
