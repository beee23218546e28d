"""Model graph representation, manifest/weight ingestion and preprocessing.

A model is an ordered list of layers described by a JSON manifest plus a raw
weight file: little-endian float32 values concatenated in manifest order,
with each weighted layer carrying the byte offset of its blob (weights, then
bias). Tensors are row-major, channel-last: (H, W, C) or flat (D,).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from streamcnn.fixedpoint import DEFAULT_FORMAT, FxFormat

CONV_KINDS = ("conv2d",)
POOL_KINDS = ("maxpool", "avgpool")
WEIGHTED_KINDS = ("conv2d", "dense", "scale_bias")
ALL_KINDS = ("conv2d", "dense", "maxpool", "avgpool", "relu", "softmax", "flatten", "scale_bias")


class ModelError(ValueError):
    """Manifest, weight-file or shape validation failure."""


@dataclass
class Layer:
    name: str
    kind: str
    filters: int = 0          # conv2d: output channels N
    kernel: int = 0           # conv2d: square kernel size K
    stride: int = 1
    padding: str = "valid"
    pool: int = 0             # pooling region size p
    units: int = 0            # dense: output width
    use_bias: bool = False
    weights: Optional[np.ndarray] = None  # conv (J,K,C,N); dense (in,out); scale_bias gamma (C,)
    bias: Optional[np.ndarray] = None     # conv/dense (N,); scale_bias beta (C,)
    precision: FxFormat = DEFAULT_FORMAT
    out_precision: FxFormat = DEFAULT_FORMAT
    reuse_factor: int = 1

    def weight_count(self, in_shape: tuple) -> int:
        """Number of weight floats (excluding bias) given the input shape."""
        if self.kind == "conv2d":
            c = in_shape[2]
            return self.kernel * self.kernel * c * self.filters
        if self.kind == "dense":
            return in_shape[0] * self.units
        if self.kind == "scale_bias":
            return in_shape[-1]
        return 0

    def bias_count(self, in_shape: tuple) -> int:
        if self.kind == "scale_bias":
            return in_shape[-1]
        if self.kind == "conv2d" and self.use_bias:
            return self.filters
        if self.kind == "dense" and self.use_bias:
            return self.units
        return 0


@dataclass
class ModelGraph:
    name: str
    input_shape: tuple
    layers: list[Layer]
    input_precision: FxFormat = DEFAULT_FORMAT
    input_shapes: list[tuple] = field(default_factory=list)
    output_shapes: list[tuple] = field(default_factory=list)

    @property
    def output_shape(self) -> tuple:
        return self.output_shapes[-1] if self.output_shapes else ()

    def layer_named(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise ModelError(f"unknown layer name {name!r}")

    def copy(self) -> "ModelGraph":
        layers = [
            replace(
                l,
                weights=None if l.weights is None else l.weights.copy(),
                bias=None if l.bias is None else l.bias.copy(),
            )
            for l in self.layers
        ]
        return replace(self, layers=layers)


def conv_output_hw(h: int, w: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        if k > h or k > w:
            raise ModelError(f"kernel exceeds input: {k}x{k} on {h}x{w}")
        return (h - k) // stride + 1, (w - k) // stride + 1
    if padding == "same":
        return math.ceil(h / stride), math.ceil(w / stride)
    raise ModelError(f"unknown padding mode {padding!r}")


def same_pad_before(h: int, k: int, stride: int) -> int:
    """Rows/cols of zero padding before the first input row (TF convention)."""
    out = math.ceil(h / stride)
    total = max((out - 1) * stride + k - h, 0)
    return total // 2


def infer_shapes(g: ModelGraph) -> ModelGraph:
    """Validate layer compatibility and fill per-layer input/output shapes."""
    if not g.layers:
        raise ModelError("empty model")
    in_shapes, out_shapes = [], []
    shape = tuple(g.input_shape)
    for layer in g.layers:
        in_shapes.append(shape)
        if layer.kind == "conv2d":
            if len(shape) != 3:
                raise ModelError(f"{layer.name}: conv2d needs (H, W, C) input, got {shape}")
            v, u = conv_output_hw(shape[0], shape[1], layer.kernel, layer.stride, layer.padding)
            shape = (v, u, layer.filters)
        elif layer.kind in POOL_KINDS:
            if len(shape) != 3:
                raise ModelError(f"{layer.name}: pooling needs (H, W, C) input, got {shape}")
            p = layer.pool
            v, u = shape[0] // p, shape[1] // p
            # Keras valid-pool semantics: trailing rows/cols that do not fill
            # a window are dropped (the SVHN net pools 13x13 down to 6x6).
            if v == 0 or u == 0:
                raise ModelError(f"{layer.name}: pool size {p} exceeds input {shape[:2]}")
            shape = (v, u, shape[2])
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise ModelError(f"{layer.name}: dense needs flat input, got {shape}")
            shape = (layer.units,)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind in ("relu", "scale_bias"):
            pass
        elif layer.kind == "softmax":
            if len(shape) != 1:
                raise ModelError(f"{layer.name}: softmax needs flat input, got {shape}")
        else:
            raise ModelError(f"{layer.name}: unknown layer kind {layer.kind!r}")
        out_shapes.append(shape)
    return replace(g, input_shapes=in_shapes, output_shapes=out_shapes)


# ---------------------------------------------------------------------------
# manifest + weight file I/O

def _format_to_json(fmt: FxFormat) -> dict:
    d = {"total_bits": fmt.total_bits, "integer_bits": fmt.integer_bits}
    if not fmt.signed:
        d["signed"] = False
    return d


def _format_from_json(d: dict) -> FxFormat:
    return FxFormat(d["total_bits"], d["integer_bits"], d.get("signed", True))


def _layer_to_json(layer: Layer, offset: Optional[int]) -> dict:
    d: dict = {"name": layer.name, "kind": layer.kind}
    if layer.kind == "conv2d":
        d.update(filters=layer.filters, kernel=layer.kernel, stride=layer.stride,
                 padding=layer.padding, use_bias=layer.use_bias)
    elif layer.kind in POOL_KINDS:
        d["pool"] = layer.pool
    elif layer.kind == "dense":
        d.update(units=layer.units, use_bias=layer.use_bias)
    if offset is not None:
        d["weights_offset"] = offset
    if layer.precision != DEFAULT_FORMAT:
        d["precision"] = _format_to_json(layer.precision)
    if layer.out_precision != DEFAULT_FORMAT:
        d["out_precision"] = _format_to_json(layer.out_precision)
    if layer.reuse_factor != 1:
        d["reuse_factor"] = layer.reuse_factor
    return d


def _layer_from_json(d: dict) -> tuple[Layer, Optional[int]]:
    kind = d.get("kind")
    if kind not in ALL_KINDS:
        raise ModelError(f"{d.get('name', '?')}: unknown layer kind {kind!r}")
    layer = Layer(
        name=d["name"],
        kind=kind,
        filters=d.get("filters", 0),
        kernel=d.get("kernel", 0),
        stride=d.get("stride", 1),
        padding=d.get("padding", "valid"),
        pool=d.get("pool", 0),
        units=d.get("units", 0),
        use_bias=d.get("use_bias", False),
        precision=_format_from_json(d["precision"]) if "precision" in d else DEFAULT_FORMAT,
        out_precision=_format_from_json(d["out_precision"]) if "out_precision" in d else DEFAULT_FORMAT,
        reuse_factor=d.get("reuse_factor", 1),
    )
    return layer, d.get("weights_offset")


def load_manifest(manifest_path: str | Path) -> tuple[ModelGraph, dict[str, int]]:
    """Parse a manifest; returns the graph (weights unset) and byte offsets."""
    try:
        spec = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as e:
        raise ModelError(f"manifest is not valid JSON: {e}") from e
    layers, offsets = [], {}
    for entry in spec.get("layers", []):
        layer, offset = _layer_from_json(entry)
        layers.append(layer)
        if offset is not None:
            offsets[layer.name] = offset
    g = ModelGraph(
        name=spec.get("name", "model"),
        input_shape=tuple(spec["input_shape"]),
        layers=layers,
        input_precision=_format_from_json(spec["input_precision"])
        if "input_precision" in spec else DEFAULT_FORMAT,
    )
    return infer_shapes(g), offsets


def load_model(manifest_path: str | Path, weights_path: str | Path) -> ModelGraph:
    """Load and validate a full model; error messages name the failing layer."""
    g, offsets = load_manifest(manifest_path)
    blob = Path(weights_path).read_bytes()
    for layer, in_shape in zip(g.layers, g.input_shapes):
        n_w = layer.weight_count(in_shape)
        n_b = layer.bias_count(in_shape)
        if n_w + n_b == 0:
            continue
        if layer.name not in offsets:
            raise ModelError(f"{layer.name}: manifest missing weights_offset")
        start = offsets[layer.name]
        end = start + 4 * (n_w + n_b)
        if end > len(blob):
            raise ModelError(
                f"{layer.name}: weight file truncated, needs bytes [{start}, {end}) "
                f"but file has {len(blob)}"
            )
        flat = np.frombuffer(blob[start:end], dtype="<f4").astype(np.float64)
        w, b = flat[:n_w], flat[n_w:]
        if layer.kind == "conv2d":
            c = in_shape[2]
            layer.weights = w.reshape(layer.kernel, layer.kernel, c, layer.filters)
        elif layer.kind == "dense":
            layer.weights = w.reshape(in_shape[0], layer.units)
        else:  # scale_bias: gamma then beta
            layer.weights = w
        layer.bias = b.copy() if n_b else None
    return g


def save_model(g: ModelGraph, manifest_path: str | Path, weights_path: str | Path) -> None:
    """Write the canonical manifest and the packed weight file."""
    g = infer_shapes(g)
    blobs: list[bytes] = []
    offset = 0
    entries = []
    for layer, in_shape in zip(g.layers, g.input_shapes):
        n = layer.weight_count(in_shape) + layer.bias_count(in_shape)
        if n == 0:
            entries.append(_layer_to_json(layer, None))
            continue
        parts = []
        if layer.weights is not None:
            parts.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        if layer.bias is not None:
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
        blob = b"".join(parts)
        if len(blob) != 4 * n:
            raise ModelError(f"{layer.name}: expected {n} weight floats, layer holds {len(blob) // 4}")
        entries.append(_layer_to_json(layer, offset))
        blobs.append(blob)
        offset += len(blob)
    manifest: dict = {"name": g.name, "input_shape": list(g.input_shape)}
    if g.input_precision != DEFAULT_FORMAT:
        manifest["input_precision"] = _format_to_json(g.input_precision)
    manifest["layers"] = entries
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    Path(weights_path).write_bytes(b"".join(blobs))


def make_synthetic_weights(g: ModelGraph, seed: int = 0) -> ModelGraph:
    """Fill all weight tensors with reproducible fan-in scaled random values."""
    g = infer_shapes(g.copy())
    rng = np.random.default_rng(seed)
    for layer, in_shape in zip(g.layers, g.input_shapes):
        if layer.kind == "conv2d":
            c = in_shape[2]
            fan_in = layer.kernel * layer.kernel * c
            layer.weights = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                       size=(layer.kernel, layer.kernel, c, layer.filters))
            if layer.use_bias:
                layer.bias = rng.normal(0.0, 0.1, size=layer.filters)
        elif layer.kind == "dense":
            fan_in = in_shape[0]
            layer.weights = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                       size=(fan_in, layer.units))
            if layer.use_bias:
                layer.bias = rng.normal(0.0, 0.1, size=layer.units)
        elif layer.kind == "scale_bias":
            c = in_shape[-1]
            layer.weights = rng.uniform(0.5, 1.5, size=c)
            layer.bias = rng.normal(0.0, 0.1, size=c)
    return g


# ---------------------------------------------------------------------------
# graph transforms and input handling

def fuse_scale_bias(g: ModelGraph) -> ModelGraph:
    """Fold each per-channel affine into the preceding conv/dense layer.

    w' = w * gamma (per output channel), b' = b * gamma + beta; exact in real
    arithmetic.
    """
    g = g.copy()
    fused: list[Layer] = []
    for layer in g.layers:
        if layer.kind != "scale_bias":
            fused.append(layer)
            continue
        if not fused or fused[-1].kind not in ("conv2d", "dense"):
            raise ModelError(f"{layer.name}: scale_bias without a conv2d/dense predecessor")
        prev = fused[-1]
        gamma, beta = layer.weights, layer.bias
        prev.weights = prev.weights * gamma  # broadcasts over the output axis
        base = prev.bias if prev.bias is not None else 0.0
        prev.bias = base * gamma + beta
        prev.use_bias = True
    return infer_shapes(replace(g, layers=fused))


def preprocess(image: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Scale u8 pixels to [0, 1] then standardize per pixel."""
    image = np.asarray(image)
    if image.shape != mean.shape or image.shape != std.shape:
        raise ModelError(
            f"shape mismatch: image {image.shape}, mean {mean.shape}, std {std.shape}"
        )
    if np.any(std <= 0):
        raise ModelError("std must be elementwise > 0")
    return (image.astype(np.float64) / 255.0 - mean) / std


def load_image(path: str | Path, shape: tuple) -> np.ndarray:
    """Read an image as u8 HWC: PNG via Pillow, anything else as raw bytes."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
        if arr.shape != tuple(shape):
            raise ModelError(f"image shape {arr.shape} does not match model input {tuple(shape)}")
        return arr
    data = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if data.size != int(np.prod(shape)):
        raise ModelError(f"raw image has {data.size} bytes, expected {int(np.prod(shape))}")
    return data.reshape(shape)


def load_raw_f32(path: str | Path, shape: tuple) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4").astype(np.float64)
    if data.size != int(np.prod(shape)):
        raise ModelError(f"{path}: expected {int(np.prod(shape))} float32 values, got {data.size}")
    return data.reshape(shape)
