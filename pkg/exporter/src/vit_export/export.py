"""One-shot export of a pre-trained ViT-Base-Patch16-224 checkpoint.

Reads an upstream model through transformers (a hub identifier or a local
directory), remaps parameters to the engine's canonical manifest, and
writes the engine's container format. Optionally emits a reference-vector
fixture: a fixed pseudo-random input together with the upstream model's
CLS embedding and pre-softmax logits for it, for cross-implementation
parity checks.
"""

from __future__ import annotations

import argparse
import datetime
import sys

import numpy as np

from .container import write_container
from .name_map import ExportError, GeometryError, expected_shapes, map_state

BASE_GEOMETRY = {
    "hidden_size": 768,
    "num_hidden_layers": 12,
    "num_attention_heads": 12,
    "intermediate_size": 3072,
    "patch_size": 16,
    "image_size": 224,
}
FIXTURE_SEED = 0


def load_upstream(model_id: str):
    import torch
    from transformers import ViTForImageClassification

    try:
        model = ViTForImageClassification.from_pretrained(model_id)
    except Exception as exc:
        raise ExportError(f"cannot load upstream checkpoint {model_id!r}: {exc}")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def check_geometry(config) -> None:
    problems = [
        f"{key}={getattr(config, key)} (expected {want})"
        for key, want in BASE_GEOMETRY.items()
        if getattr(config, key) != want
    ]
    if problems:
        raise GeometryError(
            "upstream model is not ViT-Base-Patch16-224: " + ", ".join(problems)
        )


def engine_config(config) -> dict:
    """Engine-side config metadata so loads reproduce upstream numerics."""
    return {
        "image_size": config.image_size,
        "patch_size": config.patch_size,
        "dim": config.hidden_size,
        "depth": config.num_hidden_layers,
        "heads": config.num_attention_heads,
        "mlp_dim": config.intermediate_size,
        "num_classes": config.num_labels,
        "ln_eps": config.layer_norm_eps,
    }


def export(model_id: str, out_path: str) -> dict:
    """Convert and write the checkpoint; returns the metadata written."""
    model = load_upstream(model_id)
    check_geometry(model.config)
    state = {k: v.numpy() for k, v in model.state_dict().items()}
    shapes = expected_shapes(
        depth=model.config.num_hidden_layers,
        dim=model.config.hidden_size,
        mlp=model.config.intermediate_size,
        patch=model.config.patch_size,
        image=model.config.image_size,
        channels=3,
        num_labels=model.config.num_labels,
    )
    mapped, transform_log = map_state(state, model.config.num_hidden_layers, shapes)
    metadata = {
        "config": engine_config(model.config),
        "class_names": [],
        "source": model_id,
        "exported_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "transforms": transform_log,
    }
    write_container(out_path,
                    {name: arr.astype(np.float32) for name, arr in mapped.items()},
                    metadata)
    return metadata


def fixture_input() -> np.ndarray:
    """The fixed pseudo-random 3x224x224 input (values in [0, 1), seed 0)."""
    rng = np.random.default_rng(FIXTURE_SEED)
    return rng.random((3, 224, 224)).astype(np.float32)


def emit_reference_vectors(model_id: str, out_path: str) -> None:
    """Write the fixture: input, upstream logits, and final CLS embedding."""
    import torch

    model = load_upstream(model_id)
    check_geometry(model.config)
    x = fixture_input()
    with torch.no_grad():
        pixel_values = torch.from_numpy(x[None])
        logits = model(pixel_values=pixel_values).logits[0].numpy()
        cls_embed = model.vit(pixel_values=pixel_values).last_hidden_state[0, 0].numpy()
    write_container(out_path, {
        "input": x,
        "logits": logits.astype(np.float32),
        "cls_embed": cls_embed.astype(np.float32),
    }, {
        "source": model_id,
        "seed": FIXTURE_SEED,
        "config": engine_config(model.config),
    })


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vit-export",
        description="Export ViT-Base-Patch16-224 weights to the engine container format.",
    )
    parser.add_argument("--model", required=True,
                        help="upstream model identifier or local directory")
    parser.add_argument("--out", required=True, help="output checkpoint path")
    parser.add_argument("--fixtures", help="also write a reference-vector fixture here")
    args = parser.parse_args(argv)
    try:
        meta = export(args.model, args.out)
        print(f"exported {len(meta['transforms'])} tensors from {args.model} to {args.out}")
        if args.fixtures:
            emit_reference_vectors(args.model, args.fixtures)
            print(f"wrote reference vectors to {args.fixtures}")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
