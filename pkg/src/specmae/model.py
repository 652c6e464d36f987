"""Asymmetric masked-autoencoder ViT built on :mod:`specmae.autodiff`.

The encoder sees only the visible patch tokens; the decoder re-inserts them
at their original positions, fills masked positions with one shared
learnable mask token, and predicts every patch's pixels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .masking import INIT_STREAM, MaskPlan, visible_indices
from .patchify import patchify_array


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    encoder_depth: int = 2
    decoder_dim: int = 32
    decoder_depth: int = 1
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 8
    channels: int = 10
    image_size: int = 64

    def __post_init__(self):
        for name in ("embed_dim", "decoder_dim", "heads", "patch_size", "channels", "image_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.encoder_depth < 0 or self.decoder_depth < 0 or self.mlp_ratio <= 0:
            raise ValueError("depths must be >= 0 and mlp_ratio > 0")
        for name in ("embed_dim", "decoder_dim"):
            dim = getattr(self, name)
            if dim % self.heads:
                raise ValueError(f"{name}={dim} not divisible by heads={self.heads}")
            if dim % 4:
                raise ValueError(f"{name}={dim} not divisible by 4 (2-D sin-cos embedding)")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch {self.patch_size}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ positional table


def sincos_pos_embed(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sin-cos table, (grid_h * grid_w, dim), row-major positions.

    The first dim/2 columns encode the row coordinate, the rest the column
    coordinate. Within each half, column 2j is sin(pos * w_j) and 2j+1 is
    cos(pos * w_j) with w_j = 10000 ** (-j / (dim / 4)).
    """
    if dim % 4:
        raise ValueError(f"embedding dim {dim} must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    rows, cols = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")

    def axis_embed(pos):
        ang = pos.reshape(-1, 1).astype(np.float64) * omega
        out = np.empty((ang.shape[0], 2 * quarter))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    return np.concatenate([axis_embed(rows), axis_embed(cols)], axis=1)


# ------------------------------------------------------------ parameters


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2
    return x * std


def _block_shapes(prefix: str, dim: int, hidden: int) -> list[tuple[str, tuple, str]]:
    return [
        (f"{prefix}.ln1.g", (dim,), "one"),
        (f"{prefix}.ln1.b", (dim,), "zero"),
        (f"{prefix}.attn.q.w", (dim, dim), "w"),
        (f"{prefix}.attn.q.b", (dim,), "zero"),
        (f"{prefix}.attn.k.w", (dim, dim), "w"),
        (f"{prefix}.attn.v.w", (dim, dim), "w"),
        (f"{prefix}.attn.v.b", (dim,), "zero"),
        (f"{prefix}.attn.proj.w", (dim, dim), "w"),
        (f"{prefix}.attn.proj.b", (dim,), "zero"),
        (f"{prefix}.ln2.g", (dim,), "one"),
        (f"{prefix}.ln2.b", (dim,), "zero"),
        (f"{prefix}.mlp.fc1.w", (dim, hidden), "w"),
        (f"{prefix}.mlp.fc1.b", (hidden,), "zero"),
        (f"{prefix}.mlp.fc2.w", (hidden, dim), "w"),
        (f"{prefix}.mlp.fc2.b", (dim,), "zero"),
    ]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple, str]]:
    D, Dd = cfg.embed_dim, cfg.decoder_dim
    shapes = [("patch_embed.w", (cfg.patch_dim, D), "w"), ("patch_embed.b", (D,), "zero")]
    for i in range(cfg.encoder_depth):
        shapes += _block_shapes(f"enc.{i}", D, int(D * cfg.mlp_ratio))
    if cfg.encoder_depth:
        shapes += [("enc.norm.g", (D,), "one"), ("enc.norm.b", (D,), "zero")]
    shapes += [
        ("dec_embed.w", (D, Dd), "w"),
        ("dec_embed.b", (Dd,), "zero"),
        ("mask_token", (1, Dd), "w"),
    ]
    for i in range(cfg.decoder_depth):
        shapes += _block_shapes(f"dec.{i}", Dd, int(Dd * cfg.mlp_ratio))
    if cfg.decoder_depth:
        shapes += [("dec.norm.g", (Dd,), "one"), ("dec.norm.b", (Dd,), "zero")]
    shapes += [("dec_pred.w", (Dd, cfg.patch_dim), "w"), ("dec_pred.b", (cfg.patch_dim,), "zero")]
    return shapes


def init_params(
    cfg: ModelConfig, seed: int = 0, dtype=np.float32, std: float = 0.02
) -> dict[str, Tensor]:
    """Truncated-normal weights and mask token, zero biases, unit norm gains."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(INIT_STREAM,))
    rng = np.random.Generator(np.random.Philox(ss))
    params = {}
    for name, shape, kind in param_shapes(cfg):
        if kind == "w":
            value = _trunc_normal(rng, shape, std)
        elif kind == "one":
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value.astype(dtype), requires_grad=True, name=name)
    return params


def params_like(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in arrays.items()}


# ------------------------------------------------------------ blocks


def attention(x: Tensor, params, prefix: str, heads: int, trace: list | None = None) -> Tensor:
    B, N, D = x.shape
    dh = D // heads

    def split(t):
        return ad.transpose(ad.reshape(t, (B, N, heads, dh)), (0, 2, 1, 3))

    q = split(ad.linear(x, params[f"{prefix}.q.w"], params[f"{prefix}.q.b"]))
    # no key bias: it shifts every logit of a query equally, so softmax ignores it
    k = split(ad.matmul(x, params[f"{prefix}.k.w"]))
    v = split(ad.linear(x, params[f"{prefix}.v.w"], params[f"{prefix}.v.b"]))
    att = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dh)))
    if trace is not None:
        trace.append(att.data)
    out = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (B, N, D))
    return ad.linear(out, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])


def block(x: Tensor, params, prefix: str, heads: int, trace: list | None = None) -> Tensor:
    h = ad.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = ad.add(x, attention(h, params, f"{prefix}.attn", heads, trace))
    h = ad.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = ad.gelu(ad.linear(h, params[f"{prefix}.mlp.fc1.w"], params[f"{prefix}.mlp.fc1.b"]))
    h = ad.linear(h, params[f"{prefix}.mlp.fc2.w"], params[f"{prefix}.mlp.fc2.b"])
    return ad.add(x, h)


def _stack(x: Tensor, params, prefix: str, depth: int, heads: int, trace=None) -> Tensor:
    for i in range(depth):
        x = block(x, params, f"{prefix}.{i}", heads, trace)
    if depth:
        x = ad.layer_norm(x, params[f"{prefix}.norm.g"], params[f"{prefix}.norm.b"])
    return x


# ------------------------------------------------------------ forward pieces


def _masked_rows(plans, L: int, batch: int) -> np.ndarray:
    """(B, n) masked indices from a plan, a list of plans, or index arrays."""
    if isinstance(plans, MaskPlan):
        plans = [plans]
    rows = [np.asarray(p.masked if isinstance(p, MaskPlan) else p, dtype=np.int64) for p in plans]
    if len(rows) != batch:
        raise ValueError(f"{len(rows)} mask plans for a batch of {batch}")
    for p in plans:
        if isinstance(p, MaskPlan) and p.L != L:
            raise ValueError(f"mask plan covers {p.L} patches, sequence has {L}")
    counts = {r.size for r in rows}
    if len(counts) != 1:
        raise ValueError(f"mask plans in a batch must mask equal counts, got {sorted(counts)}")
    for r in rows:
        if r.size and (r.min() < 0 or r.max() >= L):
            raise ValueError(f"masked index out of range for {L} patches")
    return np.stack(rows)


def _batched(x) -> tuple[Tensor, bool]:
    x = ad.as_tensor(getattr(x, "patches", x))
    if x.ndim == 2:
        return ad.reshape(x, (1, *x.shape)), True
    return x, False


def embed_patches(seq, params, cfg: ModelConfig) -> Tensor:
    """Project patches to D dims and add the fixed positional table (before masking)."""
    z, single = _batched(seq)
    if z.shape[-2:] != (cfg.num_patches, cfg.patch_dim):
        raise ad.ShapeError(
            f"patch sequence {z.shape[-2:]} vs config ({cfg.num_patches}, {cfg.patch_dim})"
        )
    pos = sincos_pos_embed(cfg.grid, cfg.grid, cfg.embed_dim).astype(z.data.dtype)
    tokens = ad.add(ad.linear(z, params["patch_embed.w"], params["patch_embed.b"]), pos)
    return ad.reshape(tokens, tokens.shape[1:]) if single else tokens


def encode_visible(tokens, plans, params, cfg: ModelConfig, trace: list | None = None) -> Tensor:
    x, single = _batched(tokens)
    B, L, _ = x.shape
    masked = _masked_rows(plans, L, B)
    visible = np.stack([visible_indices(m, L) for m in masked])
    h = _stack(ad.gather_rows(x, visible), params, "enc", cfg.encoder_depth, cfg.heads, trace)
    return ad.reshape(h, h.shape[1:]) if single else h


@dataclass(eq=False)
class Reconstruction:
    image_hat: Tensor  # (C, H, W) or (B, C, H, W)
    h_e: Tensor
    h_d: Tensor
    patches_hat: Tensor


def unpatchify_tensor(z: Tensor, cfg: ModelConfig) -> Tensor:
    B = z.shape[0]
    g, p, c = cfg.grid, cfg.patch_size, cfg.channels
    y = ad.reshape(z, (B, g, g, c, p, p))
    y = ad.transpose(y, (0, 3, 1, 4, 2, 5))
    return ad.reshape(y, (B, c, cfg.image_size, cfg.image_size))


def decode_full(h_e, plans, params, cfg: ModelConfig, trace: list | None = None) -> Reconstruction:
    h, single = _batched(h_e)
    B, n_vis, _ = h.shape
    L = cfg.num_patches
    masked = _masked_rows(plans, L, B)
    if n_vis != L - masked.shape[1]:
        raise ValueError(f"{n_vis} encoded tokens but plan leaves {L - masked.shape[1]} visible")
    visible = np.stack([visible_indices(m, L) for m in masked])
    y = ad.linear(h, params["dec_embed.w"], params["dec_embed.b"])
    template = ad.gather_rows(params["mask_token"], np.zeros((B, L), dtype=np.int64))
    x = ad.scatter_rows(y, visible, template)
    pos = sincos_pos_embed(cfg.grid, cfg.grid, cfg.decoder_dim).astype(x.data.dtype)
    x = ad.add(x, pos)
    h_d = _stack(x, params, "dec", cfg.decoder_depth, cfg.heads, trace)
    pred = ad.linear(h_d, params["dec_pred.w"], params["dec_pred.b"])
    image_hat = unpatchify_tensor(pred, cfg)
    if single:
        return Reconstruction(
            ad.reshape(image_hat, image_hat.shape[1:]),
            ad.reshape(h, h.shape[1:]),
            ad.reshape(h_d, h_d.shape[1:]),
            ad.reshape(pred, pred.shape[1:]),
        )
    return Reconstruction(image_hat, h, h_d, pred)


def reconstruction_loss(image, recon: Reconstruction | Tensor, plans) -> Tensor:
    """Mean over masked pixels of the channel-averaged squared error.

    For a batch the result is the mean of per-image losses (every image
    masks the same number of patches, so the pooled ratio is that mean).
    """
    target = np.asarray(getattr(image, "data", image))
    pred = recon.image_hat if isinstance(recon, Reconstruction) else ad.as_tensor(recon)
    if target.shape != pred.shape:
        raise ad.ShapeError(f"image {target.shape} vs reconstruction {pred.shape}")
    if isinstance(plans, MaskPlan):
        plans = [plans]
    masks = np.stack([np.asarray(p.binary_mask) for p in plans])
    if target.ndim == 3:
        masks = masks[0]
        mask = np.broadcast_to(masks[None], target.shape)
    else:
        if masks.shape[0] != target.shape[0]:
            raise ValueError(f"{masks.shape[0]} plans for a batch of {target.shape[0]}")
        counts = {int(m.sum()) for m in masks}
        if len(counts) != 1:
            raise ValueError("batched loss needs equal masked pixel counts per image")
        mask = np.broadcast_to(masks[:, None], target.shape)
    if not mask.any():
        raise ValueError("reconstruction loss needs at least one masked pixel")
    return ad.masked_mse(pred, target, mask)


def forward(images: np.ndarray, plans, params, cfg: ModelConfig, trace=None):
    """Full pass on a (B, C, H, W) batch: returns (loss, Reconstruction)."""
    z = patchify_array(images, cfg.patch_size)
    tokens = embed_patches(Tensor(z.astype(params["patch_embed.w"].data.dtype)), params, cfg)
    h_e = encode_visible(tokens, plans, params, cfg, trace)
    recon = decode_full(h_e, plans, params, cfg, trace)
    return reconstruction_loss(images.astype(recon.image_hat.data.dtype), recon, plans), recon
