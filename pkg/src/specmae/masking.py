"""Saliency-guided dynamic token masking.

Per patch, the saliency of the spectral-index values is the mean absolute
value over a stabilized standard deviation, averaged over indices. An
epoch-dependent mixing factor gamma = e/E blends the (min-max normalized)
saliency with uniform noise, and the top floor(p_m * L) scores are masked:

    gamma <= 0.5:  S = (1 - 2 gamma) q + 2 gamma nu
    gamma >  0.5:  S = -gamma q + (1 - gamma) nu

Early epochs mask salient ("simple") patches, the middle is pure noise, and
late epochs mask the least salient ("hard") ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .patchify import PatchKnowledge

DEFAULT_EPSILON = 1e-8
STRATEGIES = ("ssdtm", "random", "ssdtm_no_noise", "ssdtm_static")
DEFAULT_STATIC_GAMMA = 0.25

# spawn keys that separate independent random streams derived from one seed
NOISE_STREAM = 0
SHUFFLE_STREAM = 1
INIT_STREAM = 2


@dataclass(eq=False)
class SaliencyScores:
    mu: np.ndarray  # (K, L)
    mu_abs: np.ndarray  # (K, L)
    sigma: np.ndarray  # (K, L)
    q_raw: np.ndarray  # (L,)
    q_norm: np.ndarray  # (L,)
    epsilon: float


def patch_stats(a: PatchKnowledge | np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-index, per-patch mean, mean of |values| and population std."""
    a = np.asarray(getattr(a, "a", a), dtype=np.float64)
    mu = a.mean(axis=1)
    mu_abs = np.abs(a).mean(axis=1)
    sigma = a.std(axis=1)  # ddof=0
    return mu, mu_abs, sigma


def normalize_minmax(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    lo, hi = q.min(), q.max()
    if hi == lo:
        return np.zeros_like(q)
    return (q - lo) / (hi - lo)


def semantic_saliency(stats, epsilon: float = DEFAULT_EPSILON) -> SaliencyScores:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    mu, mu_abs, sigma = stats
    q_raw = np.mean(mu_abs / np.sqrt(sigma**2 + epsilon), axis=0)
    return SaliencyScores(mu, mu_abs, sigma, q_raw, normalize_minmax(q_raw), epsilon)


def saliency(a: PatchKnowledge | np.ndarray, epsilon: float = DEFAULT_EPSILON) -> SaliencyScores:
    return semantic_saliency(patch_stats(a), epsilon)


def schedule_gamma(e: int, E: int) -> float:
    if E < 1 or not 1 <= e <= E:
        raise ValueError(f"epoch {e} outside 1..{E}")
    return e / E


def dynamic_scores(q_norm: np.ndarray, gamma: float, noise: np.ndarray) -> np.ndarray:
    q_norm = np.asarray(q_norm, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if q_norm.shape != noise.shape:
        raise ValueError(f"length mismatch: q_norm {q_norm.shape} vs noise {noise.shape}")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma <= 0.5:
        return (1 - 2 * gamma) * q_norm + 2 * gamma * noise
    return -gamma * q_norm + (1 - gamma) * noise


def mask_count(p_m: float, L: int) -> int:
    return int(math.floor(p_m * L))


def select_masked(scores: np.ndarray, p_m: float) -> np.ndarray:
    """Indices of the floor(p_m L) largest scores, ties to the smaller index, sorted."""
    scores = np.asarray(scores, dtype=np.float64)
    n = mask_count(p_m, scores.size)
    if not 0 < p_m < 1 or n < 1:
        raise ValueError(f"mask ratio {p_m} selects {n} of {scores.size} tokens")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:n])


def binary_mask(masked: Sequence[int], P: int, H: int, W: int) -> np.ndarray:
    gh, gw = H // P, W // P
    grid = np.zeros(gh * gw, dtype=np.uint8)
    masked = np.asarray(masked, dtype=np.int64)
    if masked.size and (masked.min() < 0 or masked.max() >= gh * gw):
        raise IndexError(f"patch index out of range for a {gh}x{gw} grid")
    grid[masked] = 1
    return np.kron(grid.reshape(gh, gw), np.ones((P, P), dtype=np.uint8))


def visible_indices(masked: Sequence[int], L: int) -> np.ndarray:
    keep = np.ones(L, dtype=bool)
    keep[np.asarray(masked, dtype=np.int64)] = False
    return np.flatnonzero(keep)


def draw_noise(rng_seed: int, epoch: int, image_id: int, L: int) -> np.ndarray:
    """L iid U[0,1) draws from a Philox stream keyed by (seed, epoch, image id)."""
    ss = np.random.SeedSequence([int(rng_seed), int(epoch), int(image_id)], spawn_key=(NOISE_STREAM,))
    return np.random.Generator(np.random.Philox(ss)).random(L)


@dataclass(eq=False)
class MaskPlan:
    epoch: int
    total_epochs: int
    gamma: float
    noise: np.ndarray
    scores: np.ndarray
    masked: np.ndarray
    mask_ratio: float
    binary_mask: np.ndarray
    rng_seed: int
    P: int
    image_id: int = 0
    strategy: str = "ssdtm"
    q_norm: np.ndarray | None = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return self.scores.size

    @property
    def visible(self) -> np.ndarray:
        return visible_indices(self.masked, self.L)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "total_epochs": self.total_epochs,
            "gamma": self.gamma,
            "mask_ratio": self.mask_ratio,
            "rng_seed": self.rng_seed,
            "image_id": self.image_id,
            "strategy": self.strategy,
            "patch_size": self.P,
            "height": int(self.binary_mask.shape[0]),
            "width": int(self.binary_mask.shape[1]),
            "num_patches": self.L,
            "masked": [int(i) for i in self.masked],
            "scores": [float(s) for s in self.scores],
            "noise": [float(v) for v in self.noise],
            "q_norm": None if self.q_norm is None else [float(v) for v in self.q_norm],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MaskPlan":
        masked = np.asarray(d["masked"], dtype=np.int64)
        P = int(d["patch_size"])
        return cls(
            epoch=int(d["epoch"]),
            total_epochs=int(d["total_epochs"]),
            gamma=float(d["gamma"]),
            noise=np.asarray(d["noise"], dtype=np.float64),
            scores=np.asarray(d["scores"], dtype=np.float64),
            masked=masked,
            mask_ratio=float(d["mask_ratio"]),
            binary_mask=binary_mask(masked, P, int(d["height"]), int(d["width"])),
            rng_seed=int(d["rng_seed"]),
            P=P,
            image_id=int(d.get("image_id", 0)),
            strategy=d.get("strategy", "ssdtm"),
            q_norm=None if d.get("q_norm") is None else np.asarray(d["q_norm"], dtype=np.float64),
        )


def plan_from_saliency(
    q_norm: np.ndarray,
    e: int,
    E: int,
    p_m: float,
    P: int,
    H: int,
    W: int,
    rng_seed: int = 0,
    image_id: int = 0,
    strategy: str = "ssdtm",
    static_gamma: float = DEFAULT_STATIC_GAMMA,
    noise: np.ndarray | None = None,
) -> MaskPlan:
    """Mask plan for one image given its normalized saliency.

    ``noise`` pins the draws (test hook); otherwise they come from
    :func:`draw_noise`. Strategies: ``ssdtm`` (scheduled mix), ``random``
    (scores are the noise alone), ``ssdtm_no_noise`` (noise fixed at 0) and
    ``ssdtm_static`` (gamma fixed at ``static_gamma``).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    L = q_norm.size
    gamma = schedule_gamma(e, E)
    if noise is None:
        noise = draw_noise(rng_seed, e, image_id, L)
    noise = np.asarray(noise, dtype=np.float64)
    if strategy == "ssdtm_no_noise":
        noise = np.zeros(L)
    if strategy == "ssdtm_static":
        gamma = float(static_gamma)
    if strategy == "random":
        scores = noise.copy()
    else:
        scores = dynamic_scores(q_norm, gamma, noise)
    masked = select_masked(scores, p_m)
    return MaskPlan(
        epoch=e,
        total_epochs=E,
        gamma=gamma,
        noise=noise,
        scores=scores,
        masked=masked,
        mask_ratio=p_m,
        binary_mask=binary_mask(masked, P, H, W),
        rng_seed=rng_seed,
        P=P,
        image_id=image_id,
        strategy=strategy,
        q_norm=np.asarray(q_norm, dtype=np.float64),
    )


def plan_masking(
    a: PatchKnowledge,
    e: int,
    E: int,
    p_m: float,
    epsilon: float = DEFAULT_EPSILON,
    rng_seed: int = 0,
    image_id: int = 0,
    **kwargs,
) -> MaskPlan:
    sal = saliency(a, epsilon)
    return plan_from_saliency(
        sal.q_norm, e, E, p_m, a.P, a.height, a.width,
        rng_seed=rng_seed, image_id=image_id, **kwargs,
    )
