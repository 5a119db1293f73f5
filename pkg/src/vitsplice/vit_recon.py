"""Vision-Transformer reconstruction autoencoder.

Images are channels-last float arrays in [0, 1].  A forward pass splits the
image into square patches, projects each flattened patch to a token,
prepends the classification token, adds positional embeddings, runs a
pre-norm Linformer encoder, and maps every image token back to its patch
through a per-token MLP head followed by a logistic squashing.

Patch flattening order is (row, column, channel) inside the patch, and
patches are listed in row-major grid order.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import nn_core as nn
from .errors import ConfigError, NumericError, ShapeError, TilingError


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 128
    patch_size: int = 64
    channels: int = 3
    model_dim: int = 64
    depth: int = 4
    heads: int = 4
    linformer_k: int = 4
    mlp_hidden: int = 256
    head_hidden: int = 256
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.image_size <= 0 or self.patch_size <= 0 or self.channels <= 0:
            raise ConfigError("image_size, patch_size and channels must be positive")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.depth < 0:
            raise ConfigError("depth must be >= 0")
        # validates heads / k against the sequence length
        self.attention()

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def attention(self) -> nn.AttentionConfig:
        return nn.AttentionConfig(self.model_dim, self.heads, self.seq_len, self.linformer_k)

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams(OrderedDict):
    """Named learnable tensors of the model, in a fixed canonical order."""

    def __init__(self, cfg: ViTConfig, tensors=()):
        super().__init__(tensors)
        self.cfg = cfg

    def attention(self, layer: int) -> nn.AttentionWeights:
        p = f"blocks.{layer}.attn."
        names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        return nn.AttentionWeights(**{n: self[p + n] for n in names}, E=self["linformer.E"], F=self["linformer.F"])

    def mlp(self, prefix: str) -> nn.MLPWeights:
        return nn.MLPWeights(*(self[f"{prefix}.{n}"] for n in ("w1", "b1", "w2", "b2")))

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, ((k, nn.Parameter(v.data.copy())) for k, v in self.items()))


def param_shapes(cfg: ViTConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Canonical parameter names and shapes for ``cfg``."""
    D, N, n, k = cfg.model_dim, cfg.patch_dim, cfg.seq_len, cfg.linformer_k
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    shapes["patch_proj"] = (D, N)
    shapes["cls_token"] = (D,)
    shapes["pos_embed"] = (n, D)
    shapes["linformer.E"] = (k, n)
    shapes["linformer.F"] = (k, n)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        shapes[b + "ln1.gamma"] = (D,)
        shapes[b + "ln1.beta"] = (D,)
        for m in ("q", "k", "v", "o"):
            shapes[b + f"attn.w{m}"] = (D, D)
            shapes[b + f"attn.b{m}"] = (D,)
        shapes[b + "ln2.gamma"] = (D,)
        shapes[b + "ln2.beta"] = (D,)
        shapes[b + "mlp.w1"] = (cfg.mlp_hidden, D)
        shapes[b + "mlp.b1"] = (cfg.mlp_hidden,)
        shapes[b + "mlp.w2"] = (D, cfg.mlp_hidden)
        shapes[b + "mlp.b2"] = (D,)
    shapes["final_ln.gamma"] = (D,)
    shapes["final_ln.beta"] = (D,)
    shapes["head.w1"] = (cfg.head_hidden, D)
    shapes["head.b1"] = (cfg.head_hidden,)
    shapes["head.w2"] = (N, cfg.head_hidden)
    shapes["head.b2"] = (N,)
    return shapes


def init_params(cfg: ViTConfig, seed: int, std: float = 0.02) -> ModelParams:
    """Deterministic initialization: truncated normal everywhere except
    layer-norm scales (1) and shifts (0)."""
    rng = nn.make_rng(seed)
    params = ModelParams(cfg)
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith(".beta"):
            value = np.zeros(shape)
        else:
            value = nn.truncated_normal(rng, shape, std)
        params[name] = nn.Parameter(value)
    return params


# patch geometry


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split ``(..., H, W, C)`` into ``(..., num_patches, p*p*C)``."""
    image = np.asarray(image)
    *lead, H, W, C = image.shape
    if H % patch_size or W % patch_size:
        raise TilingError(f"image {H}x{W} is not divisible by patch size {patch_size}")
    gh, gw = H // patch_size, W // patch_size
    x = image.reshape(*lead, gh, patch_size, gw, patch_size, C)
    x = np.moveaxis(x, -3, -4)  # (..., gh, gw, p, p, C)
    return x.reshape(*lead, gh * gw, patch_size * patch_size * C)


def unpatchify(patches: np.ndarray, patch_size: int, height: int, width: int, channels: int) -> np.ndarray:
    patches = np.asarray(patches)
    *lead, npatch, _ = patches.shape
    gh, gw = height // patch_size, width // patch_size
    if gh * gw != npatch:
        raise ShapeError(f"{npatch} patches cannot tile a {height}x{width} image with patch {patch_size}")
    x = patches.reshape(*lead, gh, gw, patch_size, patch_size, channels)
    x = np.moveaxis(x, -4, -3)
    return x.reshape(*lead, height, width, channels)


def _unpatchify_tensor(t: nn.Tensor, cfg: ViTConfig) -> nn.Tensor:
    *lead, _, _ = t.shape
    g, p, C = cfg.grid, cfg.patch_size, cfg.channels
    x = t.reshape(*lead, g, g, p, p, C).swapaxes(-4, -3)
    return x.reshape(*lead, cfg.image_size, cfg.image_size, C)


# forward pieces


def embed(patches, params: ModelParams) -> nn.Tensor:
    """Tokens ``[T_0; W I_1; ...; W I_m] + P`` with shape ``(..., n, D)``."""
    patches = nn.as_tensor(patches)
    cfg = params.cfg
    if patches.shape[-1] != cfg.patch_dim or patches.shape[-2] != cfg.num_patches:
        raise ShapeError(f"patches {patches.shape} do not match ({cfg.num_patches}, {cfg.patch_dim})")
    lead = patches.shape[:-2]
    tokens = nn.linear(patches, params["patch_proj"])
    cls = params["cls_token"].reshape(*(1,) * len(lead), 1, cfg.model_dim)
    if lead:
        cls = cls + np.zeros((*lead, 1, cfg.model_dim))
    return nn.concat([cls, tokens], axis=-2) + params["pos_embed"]


def _check_finite(t: nn.Tensor, where: str):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activation after {where}")


def encode(tokens, params: ModelParams) -> nn.Tensor:
    """Pre-norm encoder blocks followed by a final layer norm."""
    cfg = params.cfg
    acfg = cfg.attention()
    x = nn.as_tensor(tokens)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        h = nn.layer_norm(x, params[b + "ln1.gamma"], params[b + "ln1.beta"], cfg.ln_eps)
        x = x + nn.linformer_attention(h, params.attention(i), acfg)
        h = nn.layer_norm(x, params[b + "ln2.gamma"], params[b + "ln2.beta"], cfg.ln_eps)
        x = x + nn.mlp_forward(h, params.mlp(b + "mlp"))
        _check_finite(x, f"encoder layer {i}")
    return nn.layer_norm(x, params["final_ln.gamma"], params["final_ln.beta"], cfg.ln_eps)


def reconstruct(tokens, params: ModelParams) -> nn.Tensor:
    """Map each image token to its patch in [0, 1] and reassemble the image.

    The classification token (index 0) is dropped.
    """
    tokens = nn.as_tensor(tokens)
    patch_tokens = tokens[..., 1:, :]
    values = nn.sigmoid(nn.mlp_forward(patch_tokens, params.mlp("head")))
    return _unpatchify_tensor(values, params.cfg)


def _forward_tensor(images: np.ndarray, params: ModelParams) -> nn.Tensor:
    cfg = params.cfg
    images = np.asarray(images, dtype=np.float64)
    if images.shape[-3:] != (cfg.image_size, cfg.image_size, cfg.channels):
        raise ShapeError(
            f"expected tiles of shape ({cfg.image_size}, {cfg.image_size}, {cfg.channels}), got {images.shape[-3:]}"
        )
    return reconstruct(encode(embed(patchify(images, cfg.patch_size), params), params), params)


def forward_reconstruct(image: np.ndarray, params: ModelParams) -> np.ndarray:
    """Reconstruct one tile ``(H, W, C)`` or a batch ``(B, H, W, C)``."""
    return _forward_tensor(image, params).data


def reconstruction_loss(batch: np.ndarray, params: ModelParams) -> float:
    """Mean smoothed-L1 reconstruction loss without touching gradients."""
    batch = np.asarray(batch, dtype=np.float64)
    return nn.smoothed_l1(batch, forward_reconstruct(batch, params)).item()


def train_step(batch: np.ndarray, params: ModelParams, state: nn.AdamState) -> float:
    """One Adam step on smoothed-L1 reconstruction loss; returns the pre-step loss.

    All tiles have the same element count, so the loss over the stacked batch
    equals the mean of the per-tile losses.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ShapeError("train_step needs a non-empty batch of shape (B, H, W, C)")
    loss = nn.smoothed_l1(batch, _forward_tensor(batch, params))
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError("training loss is not finite")
    loss.backward()
    nn.adam_step(params, state)
    return value
