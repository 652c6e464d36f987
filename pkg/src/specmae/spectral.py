"""Normalized-difference spectral indices used as per-pixel domain knowledge.

Inputs are expected to be reflectance-like and non-negative; under that
assumption every index lies in [-1, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .raster_io import Raster, ResolutionError

ROLES = ("Red", "Green", "NIR", "SWIR1")

# Sentinel-2 band order used by the synthetic corpus (60 m bands dropped)
S2_BANDS = (
    ("B2", 10), ("B3", 10), ("B4", 10), ("B5", 20), ("B6", 20),
    ("B7", 20), ("B8", 10), ("B8A", 20), ("B11", 20), ("B12", 20),
)
S2_ROLE_NAMES = {"Red": "B4", "Green": "B3", "NIR": "B8", "SWIR1": "B11"}


class IndexKind(enum.Enum):
    NDVI = ("NIR", "Red")
    NDWI = ("Green", "NIR")
    NDBI = ("SWIR1", "NIR")

    @property
    def roles(self) -> tuple[str, str]:
        return self.value

    @classmethod
    def parse(cls, name: "str | IndexKind") -> "IndexKind":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown index {name!r}; expected one of {[k.name for k in cls]}")


DEFAULT_KINDS = (IndexKind.NDVI, IndexKind.NDWI, IndexKind.NDBI)


class BandMapError(ValueError):
    pass


@dataclass(frozen=True)
class BandMap:
    """Semantic band role -> channel index."""

    roles: Mapping[str, int]

    def __post_init__(self):
        roles = dict(self.roles)
        for role, idx in roles.items():
            if role not in ROLES:
                raise BandMapError(f"unknown band role {role!r}; expected one of {ROLES}")
            if isinstance(idx, bool) or not isinstance(idx, (int, np.integer)) or idx < 0:
                raise BandMapError(f"role {role!r} maps to invalid channel {idx!r}")
        if len(set(roles.values())) != len(roles):
            raise BandMapError(f"band roles must map to distinct channels, got {roles}")
        object.__setattr__(self, "roles", {k: int(v) for k, v in roles.items()})

    def channel(self, role: str, channels: int) -> int:
        if role not in self.roles:
            raise BandMapError(f"band role {role!r} is absent from the band map")
        idx = self.roles[role]
        if idx >= channels:
            raise BandMapError(f"role {role!r} maps to channel {idx}, raster has {channels}")
        return idx

    @classmethod
    def from_names(cls, bands: Sequence, names: Mapping[str, str] = S2_ROLE_NAMES) -> "BandMap":
        """Resolve role -> band name against a raster's band list."""
        lookup = {(b.name if hasattr(b, "name") else str(b)): i for i, b in enumerate(bands)}
        roles = {}
        for role, name in names.items():
            if name not in lookup:
                raise BandMapError(f"band {name!r} for role {role!r} not found in {list(lookup)}")
            roles[role] = lookup[name]
        return cls(roles)

    @classmethod
    def parse(cls, spec: Mapping, bands: Sequence | None = None) -> "BandMap":
        """Accept either role -> channel index or role -> band name."""
        if all(isinstance(v, str) for v in spec.values()):
            if bands is None:
                raise BandMapError("band names in a band map need the raster's band list")
            return cls.from_names(bands, spec)
        return cls(dict(spec))


def sentinel2_band_map() -> BandMap:
    return BandMap.from_names([name for name, _ in S2_BANDS])


def normalized_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a - b) / (a + b) with 0 wherever a + b == 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = a - b
    den = a + b
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def compute_index(raster: Raster, kind: IndexKind | str, band_map: BandMap) -> np.ndarray:
    kind = IndexKind.parse(kind)
    ia, ib = (band_map.channel(role, raster.channels) for role in kind.roles)
    ra, rb = raster.bands[ia].resolution_m, raster.bands[ib].resolution_m
    if ra != rb:
        raise ResolutionError(
            f"{kind.name} mixes {raster.bands[ia].name} at {ra} m with "
            f"{raster.bands[ib].name} at {rb} m; resample first"
        )
    return normalized_difference(raster.data[ia], raster.data[ib])


@dataclass(eq=False)
class KnowledgeTensor:
    psi: np.ndarray  # (K, H, W)
    kinds: tuple[IndexKind, ...]

    @property
    def K(self) -> int:
        return self.psi.shape[0]


def compute_knowledge_tensor(
    raster: Raster,
    kinds: Sequence[IndexKind | str] = DEFAULT_KINDS,
    band_map: BandMap | None = None,
) -> KnowledgeTensor:
    kinds = tuple(IndexKind.parse(k) for k in kinds)
    if not kinds:
        raise ValueError("at least one index kind is required")
    if band_map is None:
        band_map = BandMap.from_names(raster.bands)
    psi = np.stack([compute_index(raster, k, band_map) for k in kinds])
    return KnowledgeTensor(psi, kinds)
