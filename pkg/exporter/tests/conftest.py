"""Builds a local upstream model once per session.

No network access is assumed: the upstream checkpoint is a seeded,
randomly initialized ViT-Base-Patch16-224 saved to disk, which is
indistinguishable from a downloaded one as far as the exporter and the
parity checks are concerned.
"""

import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

import pytest


@pytest.fixture(scope="session")
def upstream_dir(tmp_path_factory):
    import torch
    from transformers import ViTConfig, ViTForImageClassification

    torch.manual_seed(0)
    model = ViTForImageClassification(ViTConfig(num_labels=1000))
    path = tmp_path_factory.mktemp("upstream") / "vit-base-random"
    model.save_pretrained(path)
    del model
    return str(path)


@pytest.fixture(scope="session")
def exported(tmp_path_factory, upstream_dir):
    from vit_export import emit_reference_vectors, export

    out_dir = tmp_path_factory.mktemp("export")
    ckpt = out_dir / "base.ckpt"
    fixtures = out_dir / "reference.ckpt"
    meta = export(upstream_dir, str(ckpt))
    emit_reference_vectors(upstream_dir, str(fixtures))
    return {"ckpt": ckpt, "fixtures": fixtures, "meta": meta, "upstream": upstream_dir}
