import numpy as np
import pytest

from streamcnn.fixedpoint import FxFormat, quantize_tensor
from streamcnn.model import Layer, ModelGraph, infer_shapes, make_synthetic_weights
from streamcnn.reference import conv2d_direct, pool_direct, run_direct
from streamcnn.streaming.engine import (
    DeadlockError,
    conv2d_stream,
    pool_stream,
    run_stream,
    window_fifo_capacity,
)
from streamcnn.streaming.fifo import FifoChannel, FifoOverflow, FifoUnderflow
from streamcnn.verify import random_graph, run_equivalence_trials

F16_6 = FxFormat(16, 6)


def pixel_stream(x):
    return [x[v, u, :] for v in range(x.shape[0]) for u in range(x.shape[1])]


class TestFifo:
    def test_counts_and_peak(self):
        f = FifoChannel("f", 3)
        f.push(1)
        f.push(2)
        assert len(f) == 2 and f.peak == 2
        assert f.pop() == 1
        assert f.push_count == 2 and f.pop_count == 1

    def test_overflow_names_buffer(self):
        f = FifoChannel("conv.win[0][1]", 1)
        f.push(1)
        with pytest.raises(FifoOverflow, match=r"conv\.win\[0\]\[1\]"):
            f.push(2)

    def test_underflow(self):
        with pytest.raises(FifoUnderflow):
            FifoChannel("f", 1).pop()


class TestConvStream:
    def test_identity_kernel_center_crop(self):
        x = np.arange(5 * 5, dtype=np.float64).reshape(5, 5, 1)
        w = np.zeros((3, 3, 1, 1))
        w[1, 1, 0, 0] = 1.0
        layer = Layer("c", "conv2d", filters=1, kernel=3, weights=w)
        outs, stats = conv2d_stream(pixel_stream(x), layer, (5, 5, 1))
        got = np.stack(outs).reshape(3, 3)
        assert np.array_equal(got, x[1:4, 1:4, 0])
        assert stats.consumption_cycles == 25

    def test_consumption_is_hw_cycles(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(32, 32, 3))
        layer = Layer("c", "conv2d", filters=4, kernel=3,
                      weights=rng.normal(size=(3, 3, 3, 4)))
        _, stats = conv2d_stream(pixel_stream(x), layer, (32, 32, 3))
        assert stats.consumption_cycles == 1024

    def test_same_padding_consumption_counts_real_items_only(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 6, 2))
        layer = Layer("c", "conv2d", filters=3, kernel=3, padding="same",
                      weights=rng.normal(size=(3, 3, 2, 3)))
        outs, stats = conv2d_stream(pixel_stream(x), layer, (6, 6, 2))
        assert stats.consumption_cycles == 36
        assert len(outs) == 36

    @pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "valid"), (1, "same"), (2, "same")])
    def test_matches_direct_fixed(self, stride, padding):
        rng = np.random.default_rng(2)
        x = quantize_tensor(rng.normal(size=(7, 9, 2)), F16_6)
        w = rng.normal(size=(3, 3, 2, 4)) * 0.4
        layer = Layer("c", "conv2d", filters=4, kernel=3, stride=stride,
                      padding=padding, weights=w)
        wq = quantize_tensor(w, layer.precision)
        want = conv2d_direct(x, wq, None, stride, padding, out_format=F16_6)
        stream = [x.raw[v, u, :] for v in range(7) for u in range(9)]
        outs, _ = conv2d_stream(stream, layer, (7, 9, 2), mode="fixed", in_format=F16_6)
        got = np.stack(outs).reshape(want.raw.shape)
        assert np.array_equal(got, want.raw)

    def test_window_fifo_capacity_bound_is_respected(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(16, 16, 1))
        layer = Layer("c", "conv2d", filters=1, kernel=5,
                      weights=rng.normal(size=(5, 5, 1, 1)))
        _, stats = conv2d_stream(pixel_stream(x), layer, (16, 16, 1))
        assert stats.window_fifo_peak <= window_fifo_capacity(5, 16)

    def test_too_small_fifo_overflows_with_name(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(8, 8, 1))
        layer = Layer("c", "conv2d", filters=1, kernel=3,
                      weights=rng.normal(size=(3, 3, 1, 1)))
        with pytest.raises(FifoOverflow, match=r"c\.win"):
            conv2d_stream(pixel_stream(x), layer, (8, 8, 1), fifo_capacity=2)


class TestPoolStream:
    def test_2x2_max_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        layer = Layer("p", "maxpool", pool=2)
        outs, stats = pool_stream(pixel_stream(x), layer, (2, 2, 1), kind="max")
        assert len(outs) == 1 and outs[0][0] == 4.0
        assert stats.items_in == 4

    @pytest.mark.parametrize("kind", ["max", "avg"])
    @pytest.mark.parametrize("shape,p", [((6, 6, 3), 2), ((9, 9, 2), 3), ((5, 7, 1), 2)])
    def test_matches_pool_direct(self, kind, shape, p):
        rng = np.random.default_rng(5)
        x = rng.normal(size=shape)
        layer = Layer("p", f"{kind}pool", pool=p)
        want = pool_direct(x, p, kind)
        outs, _ = pool_stream(pixel_stream(x), layer, shape, kind=kind)
        got = np.stack(outs).reshape(want.shape)
        assert np.max(np.abs(got - want)) < 1e-15

    def test_fixed_avg_matches_direct_exactly(self):
        rng = np.random.default_rng(6)
        x = quantize_tensor(rng.normal(size=(6, 6, 2)), F16_6)
        layer = Layer("p", "avgpool", pool=3)
        want = pool_direct(x, 3, "avg", out_format=F16_6)
        stream = [x.raw[v, u, :] for v in range(6) for u in range(6)]
        outs, _ = pool_stream(stream, layer, (6, 6, 2), mode="fixed", kind="avg", in_format=F16_6)
        got = np.stack(outs).reshape(want.raw.shape)
        assert np.array_equal(got, want.raw)


class TestRunStream:
    def test_svhn_equals_direct_fixed(self, svhn_graph):
        rng = np.random.default_rng(7)
        for _ in range(3):
            x = rng.normal(size=(32, 32, 3))
            want = run_direct(svhn_graph, x, "fixed")
            got, stats = run_stream(svhn_graph, x, "fixed")
            assert np.array_equal(got, want)
            assert 1024 <= stats.ii_cycles <= 1060

    def test_svhn_ii_and_latency(self, svhn_graph):
        x = np.zeros((32, 32, 3))
        _, stats = run_stream(svhn_graph, x, "fixed")
        assert stats.layers[0].consumption_cycles == 1024
        assert stats.ii_cycles == 1029
        assert stats.latency_cycles == 1035

    def test_single_layer_pipeline_stats(self):
        rng = np.random.default_rng(8)
        g = ModelGraph("one", (6, 6, 2), [Layer("c", "conv2d", filters=3, kernel=3)])
        g = make_synthetic_weights(g, seed=1)
        x = rng.normal(size=(6, 6, 2))
        _, pipeline = run_stream(g, x, "fixed")
        layer = g.layers[0]
        xq = quantize_tensor(x, g.input_precision)
        stream = [xq.raw[v, u, :] for v in range(6) for u in range(6)]
        _, solo = conv2d_stream(stream, layer, (6, 6, 2), mode="fixed",
                                in_format=g.input_precision)
        assert pipeline.layers[0].as_dict() == solo.as_dict()

    def test_schedulers_agree(self, svhn_graph):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(32, 32, 3))
        a, sa = run_stream(svhn_graph, x, "fixed", scheduler="coroutine")
        b, sb = run_stream(svhn_graph, x, "fixed", scheduler="threads")
        assert np.array_equal(a, b)
        assert sa.as_dict() == sb.as_dict()

    def test_deterministic_across_runs(self, svhn_graph):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(32, 32, 3))
        a, sa = run_stream(svhn_graph, x, "fixed")
        b, sb = run_stream(svhn_graph, x, "fixed")
        assert np.array_equal(a, b) and sa.as_dict() == sb.as_dict()

    def test_real_mode_close_to_direct(self, svhn_graph):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(32, 32, 3))
        want = run_direct(svhn_graph, x, "real")
        got, _ = run_stream(svhn_graph, x, "real")
        assert np.max(np.abs(got - want)) < 1e-12

    def test_deadlock_reports_blocking_fifo(self, svhn_graph):
        x = np.zeros((32, 32, 3))
        with pytest.raises(DeadlockError, match="input"):
            run_stream(svhn_graph, x, "fixed", channel_capacity={"input": 0})

    def test_mask_corruption_breaks_equivalence(self):
        rng = np.random.default_rng(12)
        g = ModelGraph("one", (8, 8, 1), [Layer("c", "conv2d", filters=1, kernel=3)])
        g = make_synthetic_weights(g, seed=2)
        x = rng.normal(size=(8, 8, 1))
        want = run_direct(g, x, "fixed")
        try:
            got, _ = run_stream(g, x, "fixed", corrupt_mask_bit=1, corrupt_layer="c")
            assert not np.array_equal(got, want)
        except (FifoUnderflow, FifoOverflow, ValueError):
            pass  # a derailed dataflow is also a detected corruption


class TestPropertyEquivalence:
    def test_svhn_100_random_inputs_bit_exact(self, svhn_graph):
        rng = np.random.default_rng(123)
        for _ in range(100):
            x = rng.normal(size=(32, 32, 3))
            want = run_direct(svhn_graph, x, "fixed")
            got, _ = run_stream(svhn_graph, x, "fixed")
            assert np.array_equal(got, want)

    def test_generator_sweep_is_bit_exact(self):
        report = run_equivalence_trials(60, seed=500)
        assert report.ok and report.max_abs_deviation == 0.0

    def test_generator_covers_the_space(self):
        rng = np.random.default_rng(0)
        seen_k, seen_stride, seen_pad = set(), set(), set()
        for _ in range(80):
            g = random_graph(rng)
            conv = g.layers[0]
            seen_k.add(conv.kernel)
            seen_stride.add(conv.stride)
            seen_pad.add(conv.padding)
        assert seen_k == {1, 3, 5}
        assert seen_stride == {1, 2}
        assert seen_pad == {"valid", "same"}

    def test_fault_injection_detected(self):
        report = run_equivalence_trials(12, seed=0, corrupt_mask_bit=0)
        assert report.mismatches > 0 and report.failing_seed is not None
