"""Deterministic synthetic Sentinel-2-like scenes.

Each scene is a soil/sparse-vegetation background with axis-aligned
rectangles of vegetation, water and built-up surfaces painted on top. The
class reflectance profiles are chosen so NDVI peaks on vegetation, NDWI on
water and NDBI on built-up areas. Rectangles give pure interior patches
(low index dispersion) and mixed boundary patches (high dispersion).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .raster_io import Band, Raster, load_raster, save_raster
from .spectral import S2_BANDS

CLASSES = ("vegetation", "water", "built_up")

#                  B2    B3    B4    B5    B6    B7    B8    B8A   B11   B12
DEFAULT_PROFILES = {
    "vegetation": (0.04, 0.08, 0.10, 0.15, 0.35, 0.45, 0.60, 0.62, 0.25, 0.12),
    "water":      (0.10, 0.12, 0.08, 0.06, 0.04, 0.03, 0.03, 0.02, 0.01, 0.01),
    "built_up":   (0.15, 0.17, 0.20, 0.22, 0.24, 0.25, 0.26, 0.27, 0.38, 0.33),
    "background": (0.08, 0.11, 0.14, 0.18, 0.21, 0.23, 0.25, 0.26, 0.30, 0.26),
}

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 64
    bands: tuple = tuple((name, 10) for name, _ in S2_BANDS)  # already on the 10 m grid
    region_count: tuple[int, int] = (3, 8)
    region_size: tuple[int, int] = (8, 32)
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    jitter_std: float = 0.02
    background_std: float = 0.02
    max_vegetation_mix: float = 0.3  # background = soil blended with up to this much vegetation
    seed: int = 0

    def __post_init__(self):
        c = len(self.bands)
        if self.image_size < 1:
            raise ValueError("image_size must be positive")
        lo, hi = self.region_count
        if not 0 <= lo <= hi:
            raise ValueError(f"bad region_count {self.region_count}")
        smin, smax = self.region_size
        if not 1 <= smin <= smax <= self.image_size:
            raise ValueError(f"bad region_size {self.region_size}")
        for name in (*CLASSES, "background"):
            if name not in self.profiles:
                raise ValueError(f"profile {name!r} missing")
        for name, prof in self.profiles.items():
            if len(prof) != c:
                raise ValueError(f"profile {name!r} has {len(prof)} values for {c} bands")
            if min(prof) < 0:
                raise ValueError(f"profile {name!r} has negative reflectance")
        if self.jitter_std < 0 or self.background_std < 0:
            raise ValueError("noise std must be non-negative")
        if not 0 <= self.max_vegetation_mix <= 1:
            raise ValueError("max_vegetation_mix must lie in [0, 1]")

    @property
    def channels(self) -> int:
        return len(self.bands)

    def check_patch(self, P: int) -> None:
        if self.image_size % P:
            raise ValueError(f"image_size {self.image_size} not divisible by patch size {P}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bands"] = [list(b) for b in self.bands]
        d["region_count"] = list(self.region_count)
        d["region_size"] = list(self.region_size)
        d["profiles"] = {k: list(v) for k, v in self.profiles.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        d = dict(d)
        if "bands" in d:
            d["bands"] = tuple((str(n), float(r)) for n, r in d["bands"])
        for key in ("region_count", "region_size"):
            if key in d:
                d[key] = tuple(int(x) for x in d[key])
        if "profiles" in d:
            d["profiles"] = {k: tuple(float(x) for x in v) for k, v in d["profiles"].items()}
        return cls(**d)


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def _layout(spec: SceneSpec, rng: np.random.Generator):
    """Background vegetation fraction and (class, y0, x0, h, w) rectangles."""
    n = spec.image_size
    mix = rng.uniform(0.0, spec.max_vegetation_mix)
    lo, hi = spec.region_count
    smin, smax = spec.region_size
    rects = []
    for _ in range(int(rng.integers(lo, hi + 1))):
        cls = int(rng.integers(len(CLASSES)))
        h = int(rng.integers(smin, smax + 1))
        w = int(rng.integers(smin, smax + 1))
        y0 = int(rng.integers(0, n - h + 1))
        x0 = int(rng.integers(0, n - w + 1))
        rects.append((cls, y0, x0, h, w))
    return mix, rects


def _paint_labels(n: int, rects) -> np.ndarray:
    label = np.full((n, n), -1, dtype=np.int64)
    for cls, y0, x0, h, w in rects:
        label[y0:y0 + h, x0:x0 + w] = cls
    return label


def generate_scene(spec: SceneSpec, index: int) -> Raster:
    rng = _rng(spec.seed, index)
    n, c = spec.image_size, spec.channels
    prof = {k: np.asarray(v, dtype=np.float64) for k, v in spec.profiles.items()}
    mix, rects = _layout(spec, rng)

    base = (1 - mix) * prof["background"] + mix * prof["vegetation"]
    img = np.broadcast_to(base[:, None, None], (c, n, n)).copy()
    for cls, y0, x0, h, w in rects:
        img[:, y0:y0 + h, x0:x0 + w] = prof[CLASSES[cls]][:, None, None]
    label = _paint_labels(n, rects)

    noise = rng.standard_normal((c, n, n))
    std = np.where(label >= 0, spec.jitter_std, spec.background_std)
    img = np.clip(img + noise * std[None], 0.0, 1.0)
    bands = tuple(Band(str(name), float(res)) for name, res in spec.bands)
    return Raster(img.astype(np.float32), bands)


def scene_labels(spec: SceneSpec, index: int) -> np.ndarray:
    """Per-pixel class index (-1 for background) of ``generate_scene(spec, index)``."""
    _, rects = _layout(spec, _rng(spec.seed, index))
    return _paint_labels(spec.image_size, rects)


def generate_corpus(spec: SceneSpec, n: int, out: str | Path) -> Path:
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(n):
        name = f"{i:04d}.msr"
        save_raster(generate_scene(spec, i), out / name)
        files.append(name)
    manifest = {"spec": spec.to_dict(), "files": files}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return out / MANIFEST


def load_corpus(path: str | Path) -> list[Raster]:
    path = Path(path)
    mpath = path / MANIFEST if path.is_dir() else path
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    files = manifest.get("files")
    if not files:
        raise ValueError(f"corpus manifest {mpath} lists no files")
    return [load_raster(mpath.parent / f) for f in files]
