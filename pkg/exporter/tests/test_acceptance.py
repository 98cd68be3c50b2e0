"""Exporter acceptance: the engine reproduces the upstream reference model."""

import contextlib

import numpy as np

from vitforge import Tensor, ViTConfig, ViTParams, checkpoint, forward
from vitforge.model import forward_features


@contextlib.contextmanager
def gate(capsys, name):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"[FAIL] {name}")
        raise
    with capsys.disabled():
        print(f"[PASS] {name}")


class TestExporterParity:
    def test_manifest_validation_base_preset(self, exported, capsys):
        with gate(capsys, "exporter: manifest validation for the base preset (head exempt)"):
            tensors, _ = checkpoint.load(exported["ckpt"])
            base = ViTConfig.base_16_224(num_classes=5)
            checkpoint.validate_against_config(tensors, base, allow_head_mismatch=True)

    def test_engine_matches_upstream_on_fixture_input(self, exported, capsys):
        with gate(capsys, "exporter: engine reproduces upstream CLS embedding and "
                          "logits within 1e-3"):
            tensors, meta = checkpoint.load(exported["ckpt"])
            cfg = ViTConfig.from_dict(meta["config"])
            params = ViTParams.from_arrays(cfg, tensors, trainable=False)

            fixture, _ = checkpoint.load(exported["fixtures"])
            batch = Tensor(fixture["input"][None])

            cls_embed = forward_features(batch, params).data[0]
            logits = forward(batch, params).data[0]

            cls_err = np.abs(cls_embed - fixture["cls_embed"]).max()
            logit_err = np.abs(logits - fixture["logits"]).max()
            assert cls_err < 1e-3, f"CLS embedding differs by {cls_err:.2e}"
            assert logit_err < 1e-3, f"logits differ by {logit_err:.2e}"
