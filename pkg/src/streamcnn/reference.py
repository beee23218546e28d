"""Direct layer implementations: the correctness oracle for the stream engine.

Every operation is written as the obvious nested computation over output
positions; nothing here is tuned for speed. In fixed-point mode each MAC sum
is accumulated exactly in a wide integer accumulator and cast back to the
layer's output format in one quantization step.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from streamcnn.fixedpoint import (
    AccumulatorOverflow,
    FxFormat,
    FxTensor,
    quantize_tensor,
    requantize,
    wide_accumulator_format,
)
from streamcnn.model import ModelError, ModelGraph, conv_output_hw, same_pad_before

Tensor = Union[np.ndarray, FxTensor]


def _pad_same(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    h, w = x.shape[0], x.shape[1]
    out_h, out_w = conv_output_hw(h, w, k, stride, "same")
    top = same_pad_before(h, k, stride)
    left = same_pad_before(w, k, stride)
    bottom = max((out_h - 1) * stride + k - h - top, 0)
    right = max((out_w - 1) * stride + k - w - left, 0)
    return np.pad(x, ((top, bottom), (left, right), (0, 0)))


def check_accumulator(acc: np.ndarray, a_fmt: FxFormat, w_fmt: FxFormat, n_terms: int) -> None:
    wide = wide_accumulator_format(a_fmt, w_fmt, n_terms)
    if acc.size and (acc.min() < wide.raw_min or acc.max() > wide.raw_max):
        raise AccumulatorOverflow(
            f"MAC sum over {n_terms} terms leaves the wide accumulator {wide}"
        )


def conv2d_direct(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "valid",
    out_format: Optional[FxFormat] = None,
) -> Tensor:
    """Direct convolution: out[v,u,n] = bias[n] + sum_{j,k,c} x[v*s+j, u*s+k, c] * w[j,k,c,n].

    The window is anchored at its top-left corner; output (v, u) covers input
    rows v*s .. v*s+K-1 of the (zero-padded, for "same") input.
    """
    fixed = isinstance(x, FxTensor)
    xa = x.raw if fixed else np.asarray(x, dtype=np.float64)
    wa = w.raw if fixed else np.asarray(w, dtype=np.float64)
    if xa.ndim != 3 or wa.ndim != 4 or xa.shape[2] != wa.shape[2]:
        raise ModelError(f"conv2d shape mismatch: input {xa.shape}, weights {wa.shape}")
    k, n = wa.shape[0], wa.shape[3]
    if wa.shape[1] != k:
        raise ModelError("stream-compatible conv2d requires a square kernel")
    out_h, out_w = conv_output_hw(xa.shape[0], xa.shape[1], k, stride, padding)
    if padding == "same":
        xa = _pad_same(xa, k, stride)

    acc_dtype = np.int64 if fixed else np.float64
    acc = np.zeros((out_h, out_w, n), dtype=acc_dtype)
    for v in range(out_h):
        for u in range(out_w):
            window = xa[v * stride : v * stride + k, u * stride : u * stride + k, :]
            for o in range(n):
                acc[v, u, o] = np.sum(window * wa[:, :, :, o])

    if not fixed:
        if bias is not None:
            acc = acc + np.asarray(bias, dtype=np.float64)
        return acc

    check_accumulator(acc, x.format, w.format, k * k * xa.shape[2])
    scale = 2.0 ** -(x.format.frac_bits + w.format.frac_bits)
    values = acc.astype(np.float64) * scale
    if bias is not None:
        values = values + bias.values
    return quantize_tensor(values, out_format or x.format)


def pool_direct(x: Tensor, p: int, kind: str = "max",
                out_format: Optional[FxFormat] = None) -> Tensor:
    """Non-overlapping p x p pooling; trailing rows/cols that do not fill a
    window are dropped."""
    fixed = isinstance(x, FxTensor)
    xa = x.raw if fixed else np.asarray(x, dtype=np.float64)
    if xa.ndim != 3:
        raise ModelError(f"pooling needs (H, W, C) input, got {xa.shape}")
    out_h, out_w = xa.shape[0] // p, xa.shape[1] // p
    if out_h == 0 or out_w == 0:
        raise ModelError(f"pool size {p} exceeds input {xa.shape[:2]}")
    out = np.zeros((out_h, out_w, xa.shape[2]), dtype=xa.dtype)
    for v in range(out_h):
        for u in range(out_w):
            window = xa[v * p : (v + 1) * p, u * p : (u + 1) * p, :]
            if kind == "max":
                out[v, u, :] = window.max(axis=(0, 1))
            elif kind == "avg":
                out[v, u, :] = window.sum(axis=(0, 1)) if fixed else window.mean(axis=(0, 1))
            else:
                raise ModelError(f"unknown pooling kind {kind!r}")

    if not fixed:
        return out
    if kind == "max":
        return requantize(FxTensor(out, x.format), out_format or x.format)
    # avg: exact integer window sum, then one multiply by 1/p^2 and a single cast
    values = out.astype(np.float64) * x.format.resolution * (1.0 / (p * p))
    return quantize_tensor(values, out_format or x.format)


def dense_direct(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
                 out_format: Optional[FxFormat] = None) -> Tensor:
    fixed = isinstance(x, FxTensor)
    xa = x.raw if fixed else np.asarray(x, dtype=np.float64)
    wa = w.raw if fixed else np.asarray(w, dtype=np.float64)
    if xa.ndim != 1 or wa.ndim != 2 or wa.shape[0] != xa.shape[0]:
        raise ModelError(f"dense shape mismatch: input {xa.shape}, weights {wa.shape}")
    acc = wa.T @ xa
    if not fixed:
        return acc + np.asarray(bias, dtype=np.float64) if bias is not None else acc
    check_accumulator(acc, x.format, w.format, xa.shape[0])
    values = acc.astype(np.float64) * 2.0 ** -(x.format.frac_bits + w.format.frac_bits)
    if bias is not None:
        values = values + bias.values
    return quantize_tensor(values, out_format or x.format)


def relu(x: Tensor, out_format: Optional[FxFormat] = None) -> Tensor:
    if isinstance(x, FxTensor):
        return requantize(FxTensor(np.maximum(x.raw, 0), x.format), out_format or x.format)
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softmax(x: Tensor, out_format: Optional[FxFormat] = None) -> Tensor:
    """Softmax evaluated in real arithmetic; fixed mode quantizes the output
    probabilities only (argmax is what matters downstream)."""
    fixed = isinstance(x, FxTensor)
    xa = x.values if fixed else np.asarray(x, dtype=np.float64)
    e = np.exp(xa - xa.max())
    out = e / e.sum()
    if fixed:
        return quantize_tensor(out, out_format or x.format)
    return out


def scale_bias(x: Tensor, gamma: Tensor, beta: Tensor,
               out_format: Optional[FxFormat] = None) -> Tensor:
    if isinstance(x, FxTensor):
        values = x.values * gamma.values + beta.values
        return quantize_tensor(values, out_format or x.format)
    return np.asarray(x, dtype=np.float64) * gamma + beta


def _layer_params_fixed(layer) -> tuple:
    w = quantize_tensor(layer.weights, layer.precision) if layer.weights is not None else None
    b = quantize_tensor(layer.bias, layer.precision) if layer.bias is not None else None
    return w, b


def run_direct(
    g: ModelGraph,
    x: np.ndarray,
    mode: str = "real",
    collect: Optional[list] = None,
) -> np.ndarray:
    """Evaluate the whole graph layer by layer.

    In fixed mode the input and every layer output are quantized to their
    configured formats (post-training-quantization semantics). Appends each
    layer's real-valued output to ``collect`` when given.
    """
    if mode not in ("real", "fixed"):
        raise ModelError(f"unknown mode {mode!r}")
    if not g.input_shapes:
        from streamcnn.model import infer_shapes

        g = infer_shapes(g)
    if tuple(np.asarray(x).shape) != tuple(g.input_shape):
        raise ModelError(f"input shape {np.asarray(x).shape} != model input {tuple(g.input_shape)}")

    t: Tensor
    t = quantize_tensor(x, g.input_precision) if mode == "fixed" else np.asarray(x, dtype=np.float64)
    for layer in g.layers:
        fixed = mode == "fixed"
        out_fmt = layer.out_precision if fixed else None
        if layer.kind == "conv2d":
            w, b = _layer_params_fixed(layer) if fixed else (layer.weights, layer.bias)
            t = conv2d_direct(t, w, b, layer.stride, layer.padding, out_fmt)
        elif layer.kind == "maxpool":
            t = pool_direct(t, layer.pool, "max", out_fmt)
        elif layer.kind == "avgpool":
            t = pool_direct(t, layer.pool, "avg", out_fmt)
        elif layer.kind == "dense":
            w, b = _layer_params_fixed(layer) if fixed else (layer.weights, layer.bias)
            t = dense_direct(t, w, b, out_fmt)
        elif layer.kind == "relu":
            t = relu(t, out_fmt)
        elif layer.kind == "softmax":
            t = softmax(t, out_fmt)
        elif layer.kind == "flatten":
            if fixed:
                t = FxTensor(t.raw.reshape(-1), t.format)
            else:
                t = t.reshape(-1)
        elif layer.kind == "scale_bias":
            if fixed:
                gm, bt = _layer_params_fixed(layer)
            else:
                gm, bt = layer.weights, layer.bias
            t = scale_bias(t, gm, bt, out_fmt)
        else:
            raise ModelError(f"{layer.name}: unknown layer kind {layer.kind!r}")
        if collect is not None:
            collect.append(t.values if isinstance(t, FxTensor) else np.asarray(t).copy())
    return t.values if isinstance(t, FxTensor) else t
