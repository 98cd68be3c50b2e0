"""Upstream-to-canonical parameter mapping with layout transforms.

The engine stores matrices for the row-vector convention (x . W) and fuses
q/k/v into one D x 3D block, so most upstream Linear weights are
transposed and the attention projections are concatenated. Every transform
carries a documented inverse; `map_state` checks each one bitwise on the
64-bit staging arrays before anything is written.

Upstream names cover both state-dict dialects that transformers has used
for ViT (`vit.layers.N.attention.q_proj...` and the older
`vit.encoder.layer.N.attention.attention.query...`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ExportError(Exception):
    """The upstream checkpoint cannot be converted."""


class GeometryError(ExportError):
    """The upstream model is not ViT-Base-Patch16-224."""


@dataclass
class Transform:
    canonical: str
    upstream: list[list[str]]  # per input tensor, candidate names tried in order
    note: str

    def forward(self, arrays: list[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, out: np.ndarray) -> list[np.ndarray]:
        raise NotImplementedError


class Identity(Transform):
    def forward(self, arrays):
        return arrays[0]

    def inverse(self, out):
        return [out]


class DropLeadingOnes(Transform):
    """(1, ..., 1, a, b) -> (a, b); used for cls_token and pos_embed."""

    def __init__(self, canonical, upstream, keep: int):
        super().__init__(canonical, upstream, f"drop leading singleton axes, keep last {keep}")
        self.keep = keep

    def forward(self, arrays):
        arr = arrays[0]
        self.orig_shape = arr.shape
        return arr.reshape(arr.shape[-self.keep:])

    def inverse(self, out):
        return [out.reshape(self.orig_shape)]


class ConvToRowMajor(Transform):
    """Conv patch projection (D, Ch, P, P) -> (P*P*Ch, D) with (c, ph, pw)
    flatten order, transposed for the x . W convention."""

    def __init__(self, canonical, upstream):
        super().__init__(canonical, upstream, "reshape (D,Ch,P,P) to (D, Ch*P*P), then transpose")

    def forward(self, arrays):
        arr = arrays[0]
        self.orig_shape = arr.shape
        return arr.reshape(arr.shape[0], -1).T

    def inverse(self, out):
        return [np.ascontiguousarray(out.T).reshape(self.orig_shape)]


class TransposeLinear(Transform):
    """torch Linear weight (out, in) -> (in, out)."""

    def __init__(self, canonical, upstream):
        super().__init__(canonical, upstream, "transpose (out,in) to (in,out)")

    def forward(self, arrays):
        return np.ascontiguousarray(arrays[0].T)

    def inverse(self, out):
        return [np.ascontiguousarray(out.T)]


class FuseQKVWeights(Transform):
    """Three (D, D) Linear weights -> one (D, 3D) block in q, k, v order."""

    def __init__(self, canonical, upstream):
        super().__init__(canonical, upstream, "concat([q.T, k.T, v.T], axis=1)")

    def forward(self, arrays):
        return np.concatenate([a.T for a in arrays], axis=1)

    def inverse(self, out):
        d = out.shape[0]
        return [np.ascontiguousarray(out[:, i * d:(i + 1) * d].T) for i in range(3)]


class FuseQKVBiases(Transform):
    def __init__(self, canonical, upstream):
        super().__init__(canonical, upstream, "concat([q, k, v])")

    def forward(self, arrays):
        return np.concatenate(arrays)

    def inverse(self, out):
        d = out.shape[0] // 3
        return [out[i * d:(i + 1) * d] for i in range(3)]


def _layer_names(i: int, new: str, old: str) -> list[str]:
    return [f"vit.layers.{i}.{new}", f"vit.encoder.layer.{i}.{old}"]


def build_name_map(depth: int) -> list[Transform]:
    """Ordered transforms producing every canonical manifest name once."""
    transforms: list[Transform] = [
        DropLeadingOnes("cls_token", [["vit.embeddings.cls_token"]], keep=2),
        DropLeadingOnes("pos_embed", [["vit.embeddings.position_embeddings"]], keep=2),
        ConvToRowMajor("patch_proj.weight",
                       [["vit.embeddings.patch_embeddings.projection.weight"]]),
        Identity("patch_proj.bias",
                 [["vit.embeddings.patch_embeddings.projection.bias"]], "identity"),
    ]
    for i in range(depth):
        transforms += [
            Identity(f"layers.{i}.ln1.gamma",
                     [_layer_names(i, "layernorm_before.weight", "layernorm_before.weight")],
                     "identity"),
            Identity(f"layers.{i}.ln1.beta",
                     [_layer_names(i, "layernorm_before.bias", "layernorm_before.bias")],
                     "identity"),
            FuseQKVWeights(f"layers.{i}.qkv.weight", [
                _layer_names(i, "attention.q_proj.weight", "attention.attention.query.weight"),
                _layer_names(i, "attention.k_proj.weight", "attention.attention.key.weight"),
                _layer_names(i, "attention.v_proj.weight", "attention.attention.value.weight"),
            ]),
            FuseQKVBiases(f"layers.{i}.qkv.bias", [
                _layer_names(i, "attention.q_proj.bias", "attention.attention.query.bias"),
                _layer_names(i, "attention.k_proj.bias", "attention.attention.key.bias"),
                _layer_names(i, "attention.v_proj.bias", "attention.attention.value.bias"),
            ]),
            TransposeLinear(f"layers.{i}.attn_out.weight",
                            [_layer_names(i, "attention.o_proj.weight",
                                          "attention.output.dense.weight")]),
            Identity(f"layers.{i}.attn_out.bias",
                     [_layer_names(i, "attention.o_proj.bias", "attention.output.dense.bias")],
                     "identity"),
            Identity(f"layers.{i}.ln2.gamma",
                     [_layer_names(i, "layernorm_after.weight", "layernorm_after.weight")],
                     "identity"),
            Identity(f"layers.{i}.ln2.beta",
                     [_layer_names(i, "layernorm_after.bias", "layernorm_after.bias")],
                     "identity"),
            TransposeLinear(f"layers.{i}.fc1.weight",
                            [_layer_names(i, "mlp.fc1.weight", "intermediate.dense.weight")]),
            Identity(f"layers.{i}.fc1.bias",
                     [_layer_names(i, "mlp.fc1.bias", "intermediate.dense.bias")], "identity"),
            TransposeLinear(f"layers.{i}.fc2.weight",
                            [_layer_names(i, "mlp.fc2.weight", "output.dense.weight")]),
            Identity(f"layers.{i}.fc2.bias",
                     [_layer_names(i, "mlp.fc2.bias", "output.dense.bias")], "identity"),
        ]
    transforms += [
        Identity("final_norm.gamma", [["vit.layernorm.weight"]], "identity"),
        Identity("final_norm.beta", [["vit.layernorm.bias"]], "identity"),
        TransposeLinear("head.weight", [["classifier.weight"]]),
        Identity("head.bias", [["classifier.bias"]], "identity"),
    ]
    return transforms


def expected_shapes(depth: int, dim: int, mlp: int, patch: int, image: int,
                    channels: int, num_labels: int) -> dict[str, tuple[int, ...]]:
    """Canonical manifest shapes for the target geometry."""
    n = (image // patch) ** 2
    shapes = {
        "cls_token": (1, dim),
        "pos_embed": (n + 1, dim),
        "patch_proj.weight": (patch * patch * channels, dim),
        "patch_proj.bias": (dim,),
    }
    for i in range(depth):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.gamma": (dim,), p + "ln1.beta": (dim,),
            p + "qkv.weight": (dim, 3 * dim), p + "qkv.bias": (3 * dim,),
            p + "attn_out.weight": (dim, dim), p + "attn_out.bias": (dim,),
            p + "ln2.gamma": (dim,), p + "ln2.beta": (dim,),
            p + "fc1.weight": (dim, mlp), p + "fc1.bias": (mlp,),
            p + "fc2.weight": (mlp, dim), p + "fc2.bias": (dim,),
        })
    shapes.update({
        "final_norm.gamma": (dim,), "final_norm.beta": (dim,),
        "head.weight": (dim, num_labels), "head.bias": (num_labels,),
    })
    return shapes


def map_state(state: dict[str, np.ndarray], depth: int,
              shapes: dict[str, tuple[int, ...]]) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Apply every transform; returns (canonical f64 arrays, transform log).

    Each transform's inverse must recover the upstream tensors bitwise on
    the 64-bit staging arrays, and every output shape must match the
    manifest, or the export aborts.
    """
    out: dict[str, np.ndarray] = {}
    log: list[dict] = []
    for tf in build_name_map(depth):
        sources = []
        used_names = []
        for candidates in tf.upstream:
            found = next((n for n in candidates if n in state), None)
            if found is None:
                raise ExportError(
                    f"upstream checkpoint is missing {candidates[0]!r} "
                    f"(needed for {tf.canonical!r})"
                )
            sources.append(np.asarray(state[found], dtype=np.float64))
            used_names.append(found)
        mapped = tf.forward(sources)
        recovered = tf.inverse(mapped)
        for src, rec, name in zip(sources, recovered, used_names):
            if src.shape != rec.shape or src.tobytes() != rec.tobytes():
                raise ExportError(
                    f"transform for {tf.canonical!r} is not self-inverse on {name!r}"
                )
        if mapped.shape != shapes[tf.canonical]:
            raise ExportError(
                f"{tf.canonical!r} has shape {mapped.shape}, "
                f"expected {shapes[tf.canonical]} (from {used_names})"
            )
        out[tf.canonical] = mapped
        log.append({"canonical": tf.canonical, "upstream": used_names, "transform": tf.note})
    return out, log
