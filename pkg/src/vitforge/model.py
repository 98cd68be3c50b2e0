"""Vision Transformer forward pass: patchify, embed, encoder stack, head.

The encoder uses pre-norm blocks (layer norm inside each residual branch)
and a final layer norm before the classification head, matching the standard
ViT-Base architecture. The head returns logits; softmax is applied by the
loss and by probability-reporting paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import (
    Tensor,
    as_tensor,
    broadcast_to,
    concat,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class ViTConfig:
    """Architecture hyperparameters; shapes of every parameter follow from these."""

    image_size: int = 224
    patch_size: int = 16
    dim: int = 768
    depth: int = 12
    heads: int = 12
    mlp_dim: int = 3072
    num_classes: int = 2
    channels: int = 3
    ln_eps: float = 1e-6

    def __post_init__(self):
        for name in ("image_size", "patch_size", "dim", "depth", "heads", "mlp_dim", "num_classes", "channels"):
            if getattr(self, name) < 1:
                raise DimensionError(f"ViTConfig.{name} must be positive")
        if self.image_size % self.patch_size != 0:
            raise DimensionError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.dim % self.heads != 0:
            raise DimensionError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def patch_len(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @classmethod
    def base_16_224(cls, num_classes: int) -> "ViTConfig":
        """The `vit-base-16-224` preset."""
        return cls(image_size=224, patch_size=16, dim=768, depth=12, heads=12,
                   mlp_dim=3072, num_classes=num_classes)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "dim": self.dim,
            "depth": self.depth,
            "heads": self.heads,
            "mlp_dim": self.mlp_dim,
            "num_classes": self.num_classes,
            "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        known = {"image_size", "patch_size", "dim", "depth", "heads", "mlp_dim",
                 "num_classes", "channels", "ln_eps"}
        return cls(**{k: v for k, v in d.items() if k in known})


def manifest_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter-name manifest: every tensor name and its shape.

    This is the contract shared with the checkpoint container and the
    weight exporter; insertion order is the canonical order.
    """
    d, f, c = cfg.dim, cfg.mlp_dim, cfg.num_classes
    shapes: dict[str, tuple[int, ...]] = {
        "cls_token": (1, d),
        "pos_embed": (cfg.num_patches + 1, d),
        "patch_proj.weight": (cfg.patch_len, d),
        "patch_proj.bias": (d,),
    }
    for i in range(cfg.depth):
        p = f"layers.{i}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        shapes[p + "qkv.weight"] = (d, 3 * d)
        shapes[p + "qkv.bias"] = (3 * d,)
        shapes[p + "attn_out.weight"] = (d, d)
        shapes[p + "attn_out.bias"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "fc1.weight"] = (d, f)
        shapes[p + "fc1.bias"] = (f,)
        shapes[p + "fc2.weight"] = (f, d)
        shapes[p + "fc2.bias"] = (d,)
    shapes["final_norm.gamma"] = (d,)
    shapes["final_norm.beta"] = (d,)
    shapes["head.weight"] = (d, c)
    shapes["head.bias"] = (c,)
    return shapes


class ViTParams:
    """The full named-parameter set, keyed by the canonical manifest names."""

    def __init__(self, cfg: ViTConfig, tensors: dict[str, Tensor]):
        expected = manifest_shapes(cfg)
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise DimensionError(
                f"parameter set does not match config: missing {missing}, extra {extra}"
            )
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise DimensionError(
                    f"parameter {name} has shape {tensors[name].shape}, expected {shape}"
                )
        self.cfg = cfg
        self.tensors: dict[str, Tensor] = {name: tensors[name] for name in expected}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place (shapes must already match)."""
        for name, t in self.tensors.items():
            t.data[...] = arrays[name]

    @classmethod
    def from_arrays(cls, cfg: ViTConfig, arrays: dict[str, np.ndarray],
                    trainable: bool = True, dtype=None) -> "ViTParams":
        tensors = {
            name: Tensor(arr, requires_grad=trainable, dtype=dtype)
            for name, arr in arrays.items()
        }
        return cls(cfg, tensors)

    @classmethod
    def init(cls, cfg: ViTConfig, seed: int, dtype=None) -> "ViTParams":
        """Seeded random initialization.

        Weight matrices draw uniform in +-1/sqrt(fan_in), biases start at
        zero, norm scales at one, and the CLS/positional embeddings draw
        from N(0, 0.02), all in manifest order for reproducibility.
        """
        rng = np.random.default_rng(seed)
        tensors: dict[str, Tensor] = {}
        for name, shape in manifest_shapes(cfg).items():
            leaf = name.rsplit(".", 1)[-1]
            if name in ("cls_token", "pos_embed"):
                arr = rng.normal(0.0, 0.02, size=shape)
            elif leaf == "weight":
                bound = 1.0 / np.sqrt(shape[0])
                arr = rng.uniform(-bound, bound, size=shape)
            elif leaf == "gamma":
                arr = np.ones(shape)
            else:  # biases and beta
                arr = np.zeros(shape)
            tensors[name] = Tensor(arr, requires_grad=True, dtype=dtype)
        return cls(cfg, tensors)

    def layer(self, i: int) -> dict[str, Tensor]:
        p = f"layers.{i}."
        return {
            key: self.tensors[p + key]
            for key in ("ln1.gamma", "ln1.beta", "qkv.weight", "qkv.bias",
                        "attn_out.weight", "attn_out.bias", "ln2.gamma", "ln2.beta",
                        "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")
        }


def patchify(image, patch_size: int) -> Tensor:
    """Split Ch x S x S images into row-major patches of flattened pixels.

    Within a patch the flatten order is channel-major, then patch row, then
    patch column. A leading batch axis is carried through unchanged.
    """
    x = as_tensor(image)
    if x.ndim not in (3, 4):
        raise DimensionError(f"patchify expects Ch x S x S images, got shape {x.shape}")
    batched = x.ndim == 4
    ch, h, w = x.shape[-3:]
    if h != w:
        raise DimensionError(f"patchify expects square images, got {h} x {w}")
    if h % patch_size != 0:
        raise DimensionError(f"image side {h} not divisible by patch side {patch_size}")
    g = h // patch_size
    lead = x.shape[:1] if batched else ()
    x = reshape(x, lead + (ch, g, patch_size, g, patch_size))
    if batched:
        x = transpose(x, (0, 2, 4, 1, 3, 5))
    else:
        x = transpose(x, (1, 3, 0, 2, 4))
    return reshape(x, lead + (g * g, ch * patch_size * patch_size))


def embed(patches, params: ViTParams) -> Tensor:
    """Project patches into tokens, prepend the CLS token, add positions."""
    x = as_tensor(patches)
    n = params.cfg.num_patches
    if x.shape[-2] != n or x.shape[-1] != params.cfg.patch_len:
        raise DimensionError(
            f"embed expects {n} x {params.cfg.patch_len} patches, got {x.shape}"
        )
    pos = params["pos_embed"]
    proj = matmul(x, params["patch_proj.weight"]) + params["patch_proj.bias"]
    tokens = proj + pos[1:]
    cls = params["cls_token"] + pos[0:1]
    if x.ndim == 3:
        cls = broadcast_to(cls, (x.shape[0], 1, params.cfg.dim))
    return concat([cls, tokens], axis=-2)


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(
            f"attention operands must share shape, got {q.shape}, {k.shape}, {v.shape}"
        )
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = mul(matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))), scale)
    return matmul(softmax(scores, axis=-1), v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., T, D) -> (..., heads, T, D/heads), contiguous per-head slices."""
    lead = x.shape[:-2]
    t, d = x.shape[-2:]
    n = len(lead)
    x = reshape(x, lead + (t, heads, d // heads))
    return transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    """(..., heads, T, dk) -> (..., T, heads*dk)."""
    lead = x.shape[:-3]
    h, t, dk = x.shape[-3:]
    n = len(lead)
    x = transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return reshape(x, lead + (t, h * dk))


def encoder_layer(z, lp: dict[str, Tensor], heads: int, ln_eps: float = 1e-6) -> Tensor:
    """One pre-norm block: z + MHA(ln1(z)), then u + FFN(ln2(u))."""
    z = as_tensor(z)
    d = z.shape[-1]
    h1 = layer_norm(z, lp["ln1.gamma"], lp["ln1.beta"], eps=ln_eps)
    qkv = matmul(h1, lp["qkv.weight"]) + lp["qkv.bias"]
    sel = (slice(None),) * (qkv.ndim - 1)
    q = _split_heads(qkv[sel + (slice(0, d),)], heads)
    k = _split_heads(qkv[sel + (slice(d, 2 * d),)], heads)
    v = _split_heads(qkv[sel + (slice(2 * d, 3 * d),)], heads)
    mixed = _merge_heads(attention(q, k, v))
    u = z + (matmul(mixed, lp["attn_out.weight"]) + lp["attn_out.bias"])
    h2 = layer_norm(u, lp["ln2.gamma"], lp["ln2.beta"], eps=ln_eps)
    ffn = matmul(gelu(matmul(h2, lp["fc1.weight"]) + lp["fc1.bias"]), lp["fc2.weight"]) + lp["fc2.bias"]
    return u + ffn


def encode_tokens(tokens, params: ViTParams) -> Tensor:
    """Run the embedded token sequence through all encoder layers + final norm."""
    z = as_tensor(tokens)
    cfg = params.cfg
    for i in range(cfg.depth):
        z = encoder_layer(z, params.layer(i), cfg.heads, ln_eps=cfg.ln_eps)
    return layer_norm(z, params["final_norm.gamma"], params["final_norm.beta"], eps=cfg.ln_eps)


def forward_features(batch, params: ViTParams) -> Tensor:
    """CLS embedding after the final norm, shape (B, D)."""
    x = as_tensor(batch)
    cfg = params.cfg
    if x.shape[-1] != cfg.image_size or x.shape[-2] != cfg.image_size or x.shape[-3] != cfg.channels:
        raise DimensionError(
            f"forward expects {cfg.channels} x {cfg.image_size} x {cfg.image_size} images, "
            f"got shape {x.shape}"
        )
    tokens = embed(patchify(x, cfg.patch_size), params)
    z = encode_tokens(tokens, params)
    sel = (slice(None),) * (z.ndim - 2)
    return z[sel + (0,)]


def forward(batch, params: ViTParams) -> Tensor:
    """Full forward pass to pre-softmax logits, shape (B, num_classes)."""
    cls = forward_features(batch, params)
    return matmul(cls, params["head.weight"]) + params["head.bias"]


def predict(logits) -> np.ndarray:
    """Per-row argmax class index; ties resolve to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=-1).astype(np.int64)


@dataclass
class ViT:
    """Config + parameters bundle used by the training loop and the CLI."""

    cfg: ViTConfig
    params: ViTParams
    class_names: list[str] = field(default_factory=list)

    @classmethod
    def init(cls, cfg: ViTConfig, seed: int, class_names: list[str] | None = None,
             dtype=None) -> "ViT":
        return cls(cfg, ViTParams.init(cfg, seed, dtype=dtype), class_names or [])

    def forward(self, batch) -> Tensor:
        return forward(batch, self.params)

    def predict(self, batch) -> np.ndarray:
        return predict(self.forward(batch))
