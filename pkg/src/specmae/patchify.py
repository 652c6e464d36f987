"""Image <-> patch-sequence conversion.

Patches are enumerated row-major over the (H/P, W/P) grid. Inside a patch
the values are laid out channel-major, then row-major, so a patch vector has
index ``c * P*P + r * P + col``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster_io import Band, Raster


class PatchShapeError(ValueError):
    pass


def _grid(h: int, w: int, p: int) -> tuple[int, int]:
    if p < 1:
        raise PatchShapeError(f"patch side must be positive, got {p}")
    if h % p or w % p:
        raise PatchShapeError(f"image {h}x{w} is not divisible by patch side {p}")
    return h // p, w // p


@dataclass(eq=False)
class PatchSequence:
    patches: np.ndarray  # (L, C*P*P)
    P: int
    dims: tuple[int, int, int]  # (C, H, W)
    bands: tuple[Band, ...] = ()

    @property
    def L(self) -> int:
        return self.patches.shape[0]


@dataclass(eq=False)
class PatchKnowledge:
    a: np.ndarray  # (K, P*P, L)
    P: int
    height: int
    width: int

    @property
    def K(self) -> int:
        return self.a.shape[0]

    @property
    def L(self) -> int:
        return self.a.shape[2]


def patchify_array(x: np.ndarray, p: int) -> np.ndarray:
    """(..., C, H, W) -> (..., L, C*P*P); leading axes are carried through."""
    *lead, c, h, w = x.shape
    gh, gw = _grid(h, w, p)
    n = len(lead)
    y = x.reshape(*lead, c, gh, p, gw, p)
    perm = list(range(n)) + [n + 1, n + 3, n, n + 2, n + 4]
    return y.transpose(perm).reshape(*lead, gh * gw, c * p * p)


def unpatchify_array(z: np.ndarray, p: int, c: int, h: int, w: int) -> np.ndarray:
    *lead, l, d = z.shape
    gh, gw = _grid(h, w, p)
    if l != gh * gw or d != c * p * p:
        raise PatchShapeError(
            f"patch array {z.shape[-2:]} inconsistent with C={c}, H={h}, W={w}, P={p}"
        )
    n = len(lead)
    y = z.reshape(*lead, gh, gw, c, p, p)
    perm = list(range(n)) + [n + 2, n, n + 3, n + 1, n + 4]
    return y.transpose(perm).reshape(*lead, c, h, w)


def patchify_image(raster: Raster, P: int) -> PatchSequence:
    z = patchify_array(raster.data, P)
    return PatchSequence(np.ascontiguousarray(z), P, raster.data.shape, raster.bands)


def patchify_knowledge(psi, P: int) -> PatchKnowledge:
    psi = getattr(psi, "psi", psi)
    k, h, w = psi.shape
    gh, gw = _grid(h, w, P)
    a = psi.reshape(k, gh, P, gw, P).transpose(0, 2, 4, 1, 3).reshape(k, P * P, gh * gw)
    return PatchKnowledge(np.ascontiguousarray(a), P, h, w)


def unpatchify_knowledge(pk: PatchKnowledge) -> np.ndarray:
    k = pk.K
    gh, gw = _grid(pk.height, pk.width, pk.P)
    if pk.L != gh * gw:
        raise PatchShapeError(f"{pk.L} patches do not tile a {pk.height}x{pk.width} grid")
    p = pk.P
    return pk.a.reshape(k, p, p, gh, gw).transpose(0, 3, 1, 4, 2).reshape(k, pk.height, pk.width)


def unpatchify(seq: PatchSequence) -> Raster:
    c, h, w = seq.dims
    data = unpatchify_array(seq.patches, seq.P, c, h, w)
    bands = seq.bands or tuple(Band(f"C{i}", 0.0) for i in range(c))
    return Raster(np.ascontiguousarray(data), bands)
