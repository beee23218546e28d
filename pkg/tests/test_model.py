import json

import numpy as np
import pytest

from streamcnn.fixedpoint import FxFormat
from streamcnn.model import (
    Layer,
    ModelError,
    ModelGraph,
    fuse_scale_bias,
    infer_shapes,
    load_manifest,
    load_model,
    make_synthetic_weights,
    preprocess,
    save_model,
)
from tests.conftest import SVHN_MANIFEST


class TestShapeInference:
    def test_svhn_table_shapes(self, svhn_graph):
        g = svhn_graph
        by_name = {l.name: (si, so) for l, si, so in
                   zip(g.layers, g.input_shapes, g.output_shapes)}
        assert by_name["conv0"][0] == (32, 32, 3)
        assert by_name["conv1"][0] == (15, 15, 16)
        assert by_name["conv2"][0] == (6, 6, 16)
        assert by_name["dense0"][0] == (96,)
        assert by_name["dense1"][0] == (42,)
        assert by_name["output"][0] == (64,)
        assert g.output_shape == (10,)

    def test_first_block_chain(self):
        g = ModelGraph("t", (32, 32, 3), [
            Layer("c", "conv2d", filters=16, kernel=3),
            Layer("p", "maxpool", pool=2),
        ])
        g = infer_shapes(g)
        assert g.output_shapes == [(30, 30, 16), (15, 15, 16)]

    def test_trailing_pool_rows_dropped(self):
        g = infer_shapes(ModelGraph("t", (13, 13, 4), [Layer("p", "maxpool", pool=2)]))
        assert g.output_shape == (6, 6, 4)

    def test_kernel_exceeds_input(self):
        g = ModelGraph("t", (1, 1, 1), [Layer("c", "conv2d", filters=1, kernel=3)])
        with pytest.raises(ModelError, match="kernel exceeds input"):
            infer_shapes(g)

    def test_empty_model(self):
        with pytest.raises(ModelError, match="empty model"):
            infer_shapes(ModelGraph("t", (4, 4, 1), []))

    def test_pool_exceeds_input(self):
        g = ModelGraph("t", (3, 3, 1), [Layer("p", "avgpool", pool=4)])
        with pytest.raises(ModelError, match="pool size"):
            infer_shapes(g)

    def test_dense_needs_flat(self):
        g = ModelGraph("t", (4, 4, 1), [Layer("d", "dense", units=2)])
        with pytest.raises(ModelError, match="flat input"):
            infer_shapes(g)


class TestManifestIO:
    def test_load_svhn_manifest(self):
        g, offsets = load_manifest(SVHN_MANIFEST)
        assert g.layer_named("dense0").units == 42
        assert offsets["conv0"] == 0
        flat_idx = [l.kind for l in g.layers].index("flatten")
        assert g.output_shapes[flat_idx] == (96,)

    def test_round_trip_is_byte_identical(self, tmp_path, svhn_graph):
        m1, w1 = tmp_path / "a.json", tmp_path / "a.bin"
        save_model(svhn_graph, m1, w1)
        g = load_model(m1, w1)
        m2, w2 = tmp_path / "b.json", tmp_path / "b.bin"
        save_model(g, m2, w2)
        assert m1.read_bytes() == m2.read_bytes()
        assert w1.read_bytes() == w2.read_bytes()

    def test_truncated_weight_file(self, tmp_path, svhn_graph):
        m, w = tmp_path / "m.json", tmp_path / "w.bin"
        save_model(svhn_graph, m, w)
        blob = w.read_bytes()
        w.write_bytes(blob[:-8])  # drop the last two floats
        with pytest.raises(ModelError, match="truncated"):
            load_model(m, w)

    def test_unknown_layer_kind(self, tmp_path):
        m = tmp_path / "m.json"
        m.write_text(json.dumps({
            "name": "x", "input_shape": [4, 4, 1],
            "layers": [{"name": "l0", "kind": "deconv"}],
        }))
        with pytest.raises(ModelError, match="unknown layer kind"):
            load_manifest(m)

    def test_empty_layer_list(self, tmp_path):
        m = tmp_path / "m.json"
        m.write_text(json.dumps({"name": "x", "input_shape": [4, 4, 1], "layers": []}))
        with pytest.raises(ModelError, match="empty model"):
            load_manifest(m)

    def test_precision_survives_round_trip(self, tmp_path):
        g = ModelGraph("t", (4,), [
            Layer("d", "dense", units=2, precision=FxFormat(5, 1), out_precision=FxFormat(8, 4)),
        ])
        g = make_synthetic_weights(g)
        m, w = tmp_path / "m.json", tmp_path / "w.bin"
        save_model(g, m, w)
        loaded = load_model(m, w)
        assert loaded.layers[0].precision == FxFormat(5, 1)
        assert loaded.layers[0].out_precision == FxFormat(8, 4)


class TestFusion:
    def test_identity_fold(self):
        g = ModelGraph("t", (3,), [
            Layer("d", "dense", units=2,
                  weights=np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])),
            Layer("bn", "scale_bias", weights=np.ones(2), bias=np.zeros(2)),
        ])
        fused = fuse_scale_bias(infer_shapes(g))
        assert len(fused.layers) == 1
        assert np.array_equal(fused.layers[0].weights, g.layers[0].weights)
        assert np.array_equal(fused.layers[0].bias, np.zeros(2))

    def test_dense_fold_values(self):
        g = ModelGraph("t", (2,), [
            Layer("d", "dense", units=1, weights=np.array([[1.0], [2.0]])),
            Layer("bn", "scale_bias", weights=np.array([3.0]), bias=np.array([0.5])),
        ])
        fused = fuse_scale_bias(infer_shapes(g))
        assert fused.layers[0].weights.flatten().tolist() == [3.0, 6.0]
        assert fused.layers[0].bias.tolist() == [0.5]

    def test_scale_bias_first_is_error(self):
        g = infer_shapes(ModelGraph("t", (2,), [
            Layer("bn", "scale_bias", weights=np.ones(2), bias=np.zeros(2)),
        ]))
        with pytest.raises(ModelError, match="predecessor"):
            fuse_scale_bias(g)

    def test_fusion_equivalence_random(self):
        # Oracle: evaluate both graphs in real arithmetic on random inputs.
        from streamcnn.reference import run_direct

        rng = np.random.default_rng(5)
        g = ModelGraph("t", (6, 6, 2), [
            Layer("c", "conv2d", filters=3, kernel=3),
            Layer("bn0", "scale_bias"),
            Layer("d_flat", "flatten"),
            Layer("d", "dense", units=4),
            Layer("bn1", "scale_bias"),
        ])
        g = make_synthetic_weights(g, seed=9)
        fused = fuse_scale_bias(g)
        assert len(fused.layers) == 3
        for _ in range(10):
            x = rng.normal(size=(6, 6, 2))
            a = run_direct(g, x, mode="real")
            b = run_direct(fused, x, mode="real")
            assert np.max(np.abs(a - b)) < 1e-12


class TestPreprocess:
    def test_max_pixel(self):
        one = np.full((1, 1, 1), 255, dtype=np.uint8)
        out = preprocess(one, np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
        assert out[0, 0, 0] == 1.0

    def test_standardization(self):
        zero = np.zeros((1,), dtype=np.uint8)
        out = preprocess(zero, np.full(1, 0.5), np.full(1, 0.5))
        assert out[0] == -1.0

    def test_mid_pixel(self):
        px = np.full((1,), 128, dtype=np.uint8)
        out = preprocess(px, np.full(1, 0.4), np.full(1, 0.2))
        assert abs(out[0] - (128 / 255 - 0.4) / 0.2) < 1e-15
        assert abs(out[0] - 0.5098039215686275) < 1e-12

    def test_zero_std(self):
        with pytest.raises(ModelError, match="std"):
            preprocess(np.zeros((1,), dtype=np.uint8), np.zeros(1), np.zeros(1))

    def test_shape_mismatch(self):
        with pytest.raises(ModelError, match="shape"):
            preprocess(np.zeros((2,), dtype=np.uint8), np.zeros(1), np.ones(1))
