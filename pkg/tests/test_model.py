"""ViT forward-pass behavior: patch order, embedding, attention, invariance."""

import numpy as np
import pytest

from vitforge import (
    DimensionError,
    Tensor,
    ViT,
    ViTConfig,
    ViTParams,
    attention,
    embed,
    encoder_layer,
    forward,
    manifest_shapes,
    patchify,
    predict,
    softmax,
    use_dtype,
)
from vitforge.model import encode_tokens, forward_features


def zero_params(cfg, identity_norms=True):
    """All weights/biases zero; gammas one, betas zero."""
    arrays = {}
    for name, shape in manifest_shapes(cfg).items():
        if identity_norms and name.endswith("gamma"):
            arrays[name] = np.ones(shape, dtype=np.float64)
        else:
            arrays[name] = np.zeros(shape, dtype=np.float64)
    return ViTParams.from_arrays(cfg, arrays, trainable=False)


class TestPatchify:
    def test_base_preset_arithmetic(self):
        cfg = ViTConfig(num_classes=5)
        assert cfg.num_patches == 196
        assert cfg.patch_len == 768
        x = Tensor(np.zeros((3, 224, 224), dtype=np.float32))
        assert patchify(x, 16).shape == (196, 768)

    def test_minimal_grid(self):
        x = Tensor(np.zeros((3, 4, 4)))
        assert patchify(x, 2).shape == (4, 12)

    def test_divisibility_violation(self):
        with pytest.raises(DimensionError):
            patchify(Tensor(np.zeros((3, 5, 5))), 2)

    def test_flatten_order_channel_major_then_rows(self):
        # image[c, h, w] = 100*c + 10*h + w makes positions readable
        c, h, w = np.meshgrid(np.arange(3), np.arange(4), np.arange(4), indexing="ij")
        img = (100 * c + 10 * h + w).astype(np.float64)
        patches = patchify(Tensor(img), 2).data
        # patch 0 covers rows 0-1, cols 0-1; flatten order is (c, ph, pw)
        np.testing.assert_array_equal(
            patches[0],
            [0, 1, 10, 11, 100, 101, 110, 111, 200, 201, 210, 211],
        )
        # patches are row-major over the grid: patch 1 covers cols 2-3
        np.testing.assert_array_equal(patches[1][:4], [2, 3, 12, 13])
        # patch 2 starts the second patch row
        np.testing.assert_array_equal(patches[2][:4], [20, 21, 30, 31])

    def test_batched_variant_matches_per_image(self):
        rng = np.random.default_rng(0)
        imgs = rng.random((2, 3, 8, 8))
        batched = patchify(Tensor(imgs), 4).data
        for i in range(2):
            np.testing.assert_array_equal(batched[i], patchify(Tensor(imgs[i]), 4).data)


class TestEmbed:
    def tiny(self):
        return ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                         mlp_dim=32, num_classes=3)

    def test_zero_patches_zero_bias_zero_pos(self):
        cfg = self.tiny()
        params = zero_params(cfg)
        params["cls_token"].data[...] = 1.5
        patches = Tensor(np.zeros((cfg.num_patches, cfg.patch_len)))
        tokens = embed(patches, params).data
        np.testing.assert_array_equal(tokens[0], np.full(16, 1.5))
        np.testing.assert_array_equal(tokens[1:], 0.0)

    def test_identity_projection_passes_patches_through(self):
        # D = P*P*Ch = 12 lets the projection be the identity matrix
        cfg = ViTConfig(image_size=4, patch_size=2, dim=12, depth=1, heads=2,
                        mlp_dim=8, num_classes=2)
        params = zero_params(cfg)
        params["patch_proj.weight"].data[...] = np.eye(12)
        rng = np.random.default_rng(1)
        patches = Tensor(rng.random((cfg.num_patches, 12)))
        tokens = embed(patches, params).data
        np.testing.assert_allclose(tokens[1:], patches.data, atol=1e-12)

    def test_sequence_length_is_patches_plus_one(self):
        cfg = ViTConfig(num_classes=5)
        assert cfg.num_patches + 1 == 197
        tiny = self.tiny()
        params = zero_params(tiny)
        patches = Tensor(np.zeros((2, tiny.num_patches, tiny.patch_len)))
        assert embed(patches, params).shape == (2, tiny.num_patches + 1, 16)


class TestAttention:
    def test_single_key_returns_value(self):
        rng = np.random.default_rng(2)
        q = Tensor(rng.random((1, 4)), dtype=np.float64)
        k = Tensor(rng.random((1, 4)), dtype=np.float64)
        v = Tensor(rng.random((1, 4)), dtype=np.float64)
        np.testing.assert_array_equal(attention(q, k, v).data, v.data)

    def test_zero_query_gives_column_mean(self):
        rng = np.random.default_rng(3)
        k = Tensor(rng.random((5, 4)), dtype=np.float64)
        v = Tensor(rng.random((5, 4)), dtype=np.float64)
        q = Tensor(np.zeros((5, 4)), dtype=np.float64)
        out = attention(q, k, v).data
        np.testing.assert_allclose(out, np.tile(v.data.mean(axis=0), (5, 1)), atol=1e-12)

    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(4)
        q, k, v = (rng.random((3, 4)) for _ in range(3))
        got = attention(Tensor(q, dtype=np.float64), Tensor(k, dtype=np.float64),
                        Tensor(v, dtype=np.float64)).data
        # oracle: explicit softmax then weighted sum, scalar loops
        scores = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                scores[i, j] = float(q[i] @ k[j]) / np.sqrt(4.0)
        want = np.zeros((3, 4))
        for i in range(3):
            e = np.exp(scores[i] - scores[i].max())
            w = e / e.sum()
            for j in range(3):
                want[i] += w[j] * v[j]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_weight_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        q = Tensor(rng.random((6, 8)), dtype=np.float64)
        k = Tensor(rng.random((6, 8)), dtype=np.float64)
        scores = (q.data @ k.data.T) / np.sqrt(8.0)
        weights = softmax(Tensor(scores), axis=-1).data
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 4))),
                      Tensor(np.zeros((2, 4))))


class TestEncoderLayer:
    def tiny(self):
        return ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                         mlp_dim=32, num_classes=3)

    def test_zero_weights_identity(self):
        cfg = self.tiny()
        params = zero_params(cfg)
        rng = np.random.default_rng(6)
        z = Tensor(rng.random((5, 16)), dtype=np.float64)
        out = encoder_layer(z, params.layer(0), cfg.heads)
        np.testing.assert_array_equal(out.data, z.data)

    def test_shape_preserved(self, tiny_cfg):
        with use_dtype(np.float64):
            params = ViTParams.init(tiny_cfg, seed=0)
            z = Tensor(np.random.default_rng(7).random((2, 5, 16)))
            assert encoder_layer(z, params.layer(0), tiny_cfg.heads).shape == (2, 5, 16)

    def test_token_permutation_equivariance(self, tiny_cfg):
        with use_dtype(np.float64):
            params = ViTParams.init(tiny_cfg, seed=1)
            rng = np.random.default_rng(8)
            z = rng.random((5, 16))
            perm = np.concatenate([[0], 1 + rng.permutation(4)])
            out = encoder_layer(Tensor(z), params.layer(0), tiny_cfg.heads).data
            out_perm = encoder_layer(Tensor(z[perm]), params.layer(0), tiny_cfg.heads).data
            np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)
            np.testing.assert_allclose(out_perm[0], out[0], atol=1e-12)


class TestForward:
    def test_shape_contract_five_classes(self):
        cfg = ViTConfig(image_size=8, patch_size=4, dim=16, depth=2, heads=2,
                        mlp_dim=32, num_classes=5)
        model = ViT.init(cfg, seed=0)
        rng = np.random.default_rng(9)
        logits = model.forward(Tensor(rng.random((4, 3, 8, 8), dtype=np.float32)))
        assert logits.shape == (4, 5)

    def test_constant_head_ignores_image(self, tiny_cfg):
        params = zero_params(tiny_cfg)
        params["head.bias"].data[...] = [1.0, -2.0, 0.5]
        rng = np.random.default_rng(10)
        x = Tensor(rng.random((3, 3, 8, 8)))
        logits = forward(x, params).data
        np.testing.assert_allclose(logits, np.tile([1.0, -2.0, 0.5], (3, 1)), atol=1e-12)

    def test_duplicate_images_get_identical_logits(self, tiny_cfg):
        model = ViT.init(tiny_cfg, seed=2)
        rng = np.random.default_rng(11)
        img = rng.random((3, 8, 8), dtype=np.float32)
        batch = Tensor(np.stack([img, img]))
        logits = model.forward(batch).data
        np.testing.assert_allclose(logits[0], logits[1], atol=1e-6)

    def test_wrong_image_side(self, tiny_cfg):
        model = ViT.init(tiny_cfg, seed=0)
        with pytest.raises(DimensionError):
            model.forward(Tensor(np.zeros((1, 3, 16, 16))))

    def test_finite_outputs(self, tiny_cfg):
        model = ViT.init(tiny_cfg, seed=3)
        rng = np.random.default_rng(12)
        logits = model.forward(Tensor(rng.random((2, 3, 8, 8)))).data
        assert np.all(np.isfinite(logits))


class TestClsPermutationInvariance:
    def test_logits_invariant_under_token_permutation(self, tiny_cfg):
        model = ViT.init(tiny_cfg, seed=4)
        rng = np.random.default_rng(13)
        x = Tensor(rng.random((2, 3, 8, 8), dtype=np.float32))
        from vitforge.model import patchify as pf

        tokens = embed(pf(x, tiny_cfg.patch_size), model.params)
        base = (encode_tokens(tokens, model.params)[:, 0]
                @ model.params["head.weight"]) + model.params["head.bias"]
        for _ in range(10):
            perm = np.concatenate([[0], 1 + rng.permutation(tiny_cfg.num_patches)])
            shuffled = Tensor(tokens.data[:, perm])
            logits = (encode_tokens(shuffled, model.params)[:, 0]
                      @ model.params["head.weight"]) + model.params["head.bias"]
            np.testing.assert_allclose(logits.data, base.data, atol=1e-5)


class TestPredict:
    def test_forced_argmax(self):
        np.testing.assert_array_equal(predict(np.array([[0.1, 2.0, -1.0]])), [1])

    def test_tie_takes_lowest_index(self):
        np.testing.assert_array_equal(predict(np.array([[5.0, 5.0]])), [0])

    def test_argmax_invariant_under_softmax(self):
        rng = np.random.default_rng(14)
        logits = rng.normal(size=(50, 4))
        probs = softmax(Tensor(logits, dtype=np.float64), axis=1).data
        np.testing.assert_array_equal(predict(logits), predict(probs))


class TestManifest:
    def test_exact_names_for_tiny_depth(self):
        cfg = ViTConfig(image_size=8, patch_size=4, dim=16, depth=1, heads=2,
                        mlp_dim=32, num_classes=3)
        assert list(manifest_shapes(cfg)) == [
            "cls_token", "pos_embed", "patch_proj.weight", "patch_proj.bias",
            "layers.0.ln1.gamma", "layers.0.ln1.beta",
            "layers.0.qkv.weight", "layers.0.qkv.bias",
            "layers.0.attn_out.weight", "layers.0.attn_out.bias",
            "layers.0.ln2.gamma", "layers.0.ln2.beta",
            "layers.0.fc1.weight", "layers.0.fc1.bias",
            "layers.0.fc2.weight", "layers.0.fc2.bias",
            "final_norm.gamma", "final_norm.beta",
            "head.weight", "head.bias",
        ]

    def test_shapes_follow_config(self, tiny_cfg):
        shapes = manifest_shapes(tiny_cfg)
        assert shapes["pos_embed"] == (5, 16)
        assert shapes["patch_proj.weight"] == (48, 16)
        assert shapes["layers.1.qkv.weight"] == (16, 48)
        assert shapes["head.weight"] == (16, 3)

    def test_config_validation(self):
        with pytest.raises(DimensionError):
            ViTConfig(image_size=5, patch_size=2)
        with pytest.raises(DimensionError):
            ViTConfig(dim=10, heads=3)


class TestForwardFeatures:
    def test_cls_embedding_shape(self, tiny_cfg):
        model = ViT.init(tiny_cfg, seed=5)
        rng = np.random.default_rng(15)
        feats = forward_features(Tensor(rng.random((3, 3, 8, 8))), model.params)
        assert feats.shape == (3, 16)
