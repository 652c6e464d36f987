"""Multichannel raster container and its on-disk format.

A raster is stored as two files::

    <name>.msr       raw little-endian float32 payload, data[c][h][w], w fastest
    <name>.msr.json  {"version": 1, "channels": C, "height": H, "width": W,
                      "bands": [{"name": "B4", "resolution_m": 10}, ...]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class RasterIOError(ValueError):
    """Base class for raster read/write failures."""


class HeaderError(RasterIOError):
    pass


class PayloadLengthError(RasterIOError):
    pass


class NonFiniteValueError(RasterIOError):
    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class Band:
    name: str
    resolution_m: float

    def to_json(self) -> dict:
        res = self.resolution_m
        if float(res).is_integer():
            res = int(res)
        return {"name": self.name, "resolution_m": res}


@dataclass(eq=False)
class Raster:
    """A C x H x W float32 image with one :class:`Band` descriptor per channel."""

    data: np.ndarray
    bands: tuple[Band, ...]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"raster data must be 3-D (C, H, W), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"raster dimensions must be positive, got {data.shape}")
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.bands = tuple(
            b if isinstance(b, Band) else Band(str(b[0]), float(b[1])) for b in self.bands
        )
        if len(self.bands) != self.channels:
            raise ValueError(f"{len(self.bands)} band descriptors for {self.channels} channels")
        if not np.all(np.isfinite(self.data)):
            flat = int(np.flatnonzero(~np.isfinite(self.data.ravel()))[0])
            raise NonFiniteValueError(
                f"non-finite value at flat index {flat}", byte_offset=4 * flat
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def band_names(self) -> list[str]:
        return [b.name for b in self.bands]

    def identical(self, other: "Raster") -> bool:
        """Bitwise equality of payload and band list."""
        return (
            self.data.shape == other.data.shape
            and self.bands == other.bands
            and self.data.tobytes() == other.data.tobytes()
        )

    def header(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "bands": [b.to_json() for b in self.bands],
        }


def sidecar_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_raster(raster: Raster, path: str | os.PathLike) -> None:
    path = Path(path)
    if not np.all(np.isfinite(raster.data)):
        raise NonFiniteValueError("refusing to write a raster with non-finite values")
    payload = raster.data.astype(_DTYPE, copy=False).tobytes(order="C")
    header = json.dumps(raster.header(), indent=1, sort_keys=True)
    # OSError on unwritable destinations propagates unchanged
    with open(path, "wb") as fh:
        fh.write(payload)
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(header + "\n")


def _read_header(path: Path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise HeaderError(f"missing sidecar header {side}")
    try:
        header = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise HeaderError(f"corrupt sidecar header {side}: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError(f"header {side} is not a JSON object")
    for key in ("version", "channels", "height", "width", "bands"):
        if key not in header:
            raise HeaderError(f"header field '{key}' missing in {side}")
    if header["version"] != FORMAT_VERSION:
        raise HeaderError(f"header field 'version' = {header['version']!r} unsupported")
    for key in ("channels", "height", "width"):
        value = header[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise HeaderError(f"header field '{key}' must be a positive integer, got {value!r}")
    bands = header["bands"]
    if not isinstance(bands, list) or len(bands) != header["channels"]:
        raise HeaderError("header field 'bands' must list one entry per channel")
    for i, b in enumerate(bands):
        if not isinstance(b, dict) or "name" not in b or "resolution_m" not in b:
            raise HeaderError(f"header field 'bands[{i}]' needs 'name' and 'resolution_m'")
    return header


def load_raster(path: str | os.PathLike) -> Raster:
    path = Path(path)
    header = _read_header(path)
    c, h, w = header["channels"], header["height"], header["width"]
    raw = path.read_bytes()
    expected = 4 * c * h * w
    if len(raw) != expected:
        raise PayloadLengthError(
            f"payload {path} holds {len(raw)} bytes ({len(raw) / 4:g} floats); "
            f"header C={c},H={h},W={w} requires {expected} bytes"
        )
    data = np.frombuffer(raw, dtype=_DTYPE).reshape(c, h, w)
    bad = np.flatnonzero(~np.isfinite(data.ravel()))
    if bad.size:
        raise NonFiniteValueError(
            f"non-finite value in {path} at byte offset {4 * int(bad[0])}",
            byte_offset=4 * int(bad[0]),
        )
    bands = tuple(Band(str(b["name"]), float(b["resolution_m"])) for b in header["bands"])
    return Raster(data.astype(np.float32), bands)


def resample_nearest(
    raster: Raster | Sequence[Raster], band_indices: Sequence[int], scale: int
) -> Raster:
    """Upsample the listed bands by an integer factor and merge all bands onto one grid.

    ``raster`` is either a single raster or a sequence of rasters living on
    different grids (e.g. a 10 m group and a 20 m group). Band indices refer
    to the concatenated band order, which is preserved in the output. Every
    band must end up on the same grid, otherwise :class:`ResolutionError`.
    """
    if isinstance(scale, bool) or int(scale) != scale or scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale!r}")
    scale = int(scale)
    groups = [raster] if isinstance(raster, Raster) else list(raster)
    if not groups:
        raise ValueError("no rasters given")
    planes: list[np.ndarray] = []
    bands: list[Band] = []
    for g in groups:
        planes.extend(g.data[c] for c in range(g.channels))
        bands.extend(g.bands)
    listed = set()
    for idx in band_indices:
        if not 0 <= idx < len(planes):
            raise IndexError(f"band index {idx} out of range for {len(planes)} bands")
        listed.add(int(idx))

    out_planes = []
    out_bands = []
    for i, (plane, band) in enumerate(zip(planes, bands)):
        if i in listed and scale > 1:
            plane = np.repeat(np.repeat(plane, scale, axis=0), scale, axis=1)
            band = Band(band.name, band.resolution_m / scale)
        out_planes.append(plane)
        out_bands.append(band)

    shape = max(p.shape for p in out_planes)
    mismatched = [b.name for p, b in zip(out_planes, out_bands) if p.shape != shape]
    if mismatched:
        raise ResolutionError(
            f"bands {mismatched} are not on the {shape[0]}x{shape[1]} target grid "
            f"after scaling by {scale}"
        )
    return Raster(np.stack(out_planes), tuple(out_bands))
