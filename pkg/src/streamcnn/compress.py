"""Post-training compression passes: magnitude pruning, fixed-point PTQ and
weight/activation range profiling.

The precision config file maps layer names to formats. Entries may use the
"qkeras" convention, where a training-side width b carries no sign bit and
is realized in the engine as <b+1, i+1>; entries with the "engine"
convention are taken verbatim.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from streamcnn.fixedpoint import DEFAULT_FORMAT, FxFormat, QuantizerSpec, apply_quantizer
from streamcnn.model import ModelError, ModelGraph, infer_shapes
from streamcnn.reference import run_direct

PRUNABLE_KINDS = ("conv2d", "dense")

#: default ternary cut; the training-side value is not standardized.
TERNARY_THRESHOLD = 0.33


# ---------------------------------------------------------------------------
# magnitude pruning

@dataclass
class LayerSparsity:
    layer: str
    weight_count: int
    zero_count: int
    multiplications: int  # nonzero multiply sites after pruning

    @property
    def zero_fraction(self) -> float:
        return self.zero_count / self.weight_count if self.weight_count else 0.0


@dataclass
class SparsityReport:
    target: float
    scope: str
    layers: list[LayerSparsity] = field(default_factory=list)

    @property
    def total_multiplications(self) -> int:
        return sum(l.multiplications for l in self.layers)

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "scope": self.scope,
            "layers": [
                {
                    "layer": l.layer,
                    "weights": l.weight_count,
                    "zeros": l.zero_count,
                    "zero_fraction": l.zero_fraction,
                    "multiplications": l.multiplications,
                }
                for l in self.layers
            ],
            "total_multiplications": self.total_multiplications,
        }


def _positions(layer, out_shape) -> int:
    """How many times each weight is used per inference."""
    if layer.kind == "conv2d":
        return out_shape[0] * out_shape[1]
    return 1


def _zero_smallest(w: np.ndarray, count: int) -> np.ndarray:
    flat = w.reshape(-1).copy()
    # stable sort: ties at the threshold magnitude go by index order
    order = np.argsort(np.abs(flat), kind="stable")
    flat[order[:count]] = 0.0
    return flat.reshape(w.shape)


def prune_magnitude(g: ModelGraph, sparsity: float,
                    scope: str = "per-layer") -> tuple[ModelGraph, SparsityReport]:
    """Zero the smallest-magnitude weights; biases are never pruned."""
    if not 0.0 <= sparsity < 1.0:
        raise ModelError(f"sparsity must be in [0, 1), got {sparsity}")
    if scope not in ("per-layer", "global"):
        raise ModelError(f"unknown pruning scope {scope!r}")
    g = infer_shapes(g.copy())
    prunable = [
        (layer, out)
        for layer, out in zip(g.layers, g.output_shapes)
        if layer.kind in PRUNABLE_KINDS and layer.weights is not None
    ]
    if scope == "per-layer":
        for layer, _ in prunable:
            count = math.floor(sparsity * layer.weights.size)
            layer.weights = _zero_smallest(layer.weights, count)
    else:
        flat = np.concatenate([l.weights.reshape(-1) for l, _ in prunable])
        count = math.floor(sparsity * flat.size)
        order = np.argsort(np.abs(flat), kind="stable")
        keep = np.ones(flat.size, dtype=bool)
        keep[order[:count]] = False
        pos = 0
        for layer, _ in prunable:
            n = layer.weights.size
            mask = keep[pos : pos + n].reshape(layer.weights.shape)
            layer.weights = layer.weights * mask
            pos += n

    report = SparsityReport(target=sparsity, scope=scope)
    for layer, out in prunable:
        zeros = int(np.count_nonzero(layer.weights == 0.0))
        nnz = layer.weights.size - zeros
        report.layers.append(LayerSparsity(
            layer=layer.name,
            weight_count=layer.weights.size,
            zero_count=zeros,
            multiplications=nnz * _positions(layer, out),
        ))
    return g, report


# ---------------------------------------------------------------------------
# precision config + post-training quantization

@dataclass(frozen=True)
class PrecisionEntry:
    format: FxFormat
    quantizer_kind: str = "mantissa"
    threshold: float = TERNARY_THRESHOLD

    @property
    def weight_bits(self) -> int:
        if self.quantizer_kind == "binary":
            return 1
        if self.quantizer_kind == "ternary":
            return 2
        return self.format.total_bits


@dataclass
class PrecisionConfig:
    name: str
    default: Optional[PrecisionEntry]
    layers: dict[str, PrecisionEntry]

    def entry_for(self, layer_name: str) -> Optional[PrecisionEntry]:
        if layer_name in self.layers:
            return self.layers[layer_name]
        return self.default


def _entry_from_json(d: dict, file_convention: str) -> PrecisionEntry:
    convention = d.get("convention", file_convention)
    w, i = d["total_bits"], d["integer_bits"]
    if convention == "qkeras":
        # training-side widths carry no sign bit: realized as <b+1, i+1>
        w, i = w + 1, i + 1
    elif convention != "engine":
        raise ModelError(f"unknown precision convention {convention!r}")
    return PrecisionEntry(
        format=FxFormat(w, i),
        quantizer_kind=d.get("quantizer_kind", "mantissa"),
        threshold=d.get("threshold", TERNARY_THRESHOLD),
    )


def load_precision_config(path: str | Path) -> PrecisionConfig:
    spec = json.loads(Path(path).read_text())
    file_convention = spec.get("convention", "engine")
    default = _entry_from_json(spec["default"], file_convention) if "default" in spec else None
    layers = {
        e["layer_name"]: _entry_from_json(e, file_convention)
        for e in spec.get("layers", [])
    }
    return PrecisionConfig(name=spec.get("name", "precision"), default=default, layers=layers)


def uniform_precision_config(total_bits: int, integer_bits: int) -> PrecisionConfig:
    entry = PrecisionEntry(format=FxFormat(total_bits, integer_bits))
    return PrecisionConfig(name=f"uniform_{total_bits}_{integer_bits}", default=entry, layers={})


def ptq(g: ModelGraph, config: PrecisionConfig) -> ModelGraph:
    """Quantize all weights/biases and record per-layer activation formats.

    The softmax layer is pinned to <16,6> regardless of the config. Unknown
    layer names in the config are an error.
    """
    names = {layer.name for layer in g.layers}
    for name in config.layers:
        if name not in names:
            raise ModelError(f"precision config names unknown layer {name!r}")
    g = g.copy()
    for layer in g.layers:
        entry = config.entry_for(layer.name)
        if entry is None:
            continue
        if layer.kind == "softmax":
            layer.precision = DEFAULT_FORMAT
            layer.out_precision = DEFAULT_FORMAT
            continue
        if layer.weights is not None:
            if entry.quantizer_kind == "mantissa":
                spec = QuantizerSpec("mantissa", format=entry.format)
                layer.precision = entry.format
            else:
                spec = QuantizerSpec(entry.quantizer_kind, threshold=entry.threshold)
                # {-1, 0, +1} are exact in <2,2>
                layer.precision = FxFormat(2, 2)
            layer.weights = apply_quantizer(layer.weights, spec)
            if layer.bias is not None:
                layer.bias = apply_quantizer(layer.bias, spec)
        if layer.kind in ("relu", "scale_bias"):
            layer.out_precision = entry.format
            if layer.kind == "scale_bias" and entry.quantizer_kind == "mantissa":
                layer.precision = entry.format
    return g


def effective_weight_bits(g: ModelGraph, config: Optional[PrecisionConfig]) -> dict[str, int]:
    """Storage bits per weight for each weighted layer under a config."""
    bits = {}
    for layer in g.layers:
        if layer.weights is None:
            continue
        entry = config.entry_for(layer.name) if config else None
        if entry is not None and layer.kind != "softmax":
            bits[layer.name] = entry.weight_bits
        else:
            bits[layer.name] = layer.precision.total_bits
    return bits


# ---------------------------------------------------------------------------
# range profiling

PROFILE_PERCENTILES = (1, 5, 50, 95, 99)


@dataclass
class RangeStats:
    layer: str
    kind: str                    # "weights" or "activations"
    minimum: float
    maximum: float
    percentiles: dict[int, float]
    format: FxFormat
    covered: bool

    def as_dict(self) -> dict:
        return {
            "layer": self.layer,
            "kind": self.kind,
            "min": self.minimum,
            "max": self.maximum,
            "percentiles": {str(k): v for k, v in self.percentiles.items()},
            "format": str(self.format),
            "covered": self.covered,
        }


@dataclass
class RangeProfile:
    weights: list[RangeStats] = field(default_factory=list)
    activations: list[RangeStats] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "weights": [s.as_dict() for s in self.weights],
            "activations": [s.as_dict() for s in self.activations],
        }


def _coverage(values: np.ndarray, fmt: FxFormat) -> bool:
    magnitudes = np.abs(values)
    if magnitudes.size == 0:
        return True
    if magnitudes.max() > fmt.max_value:
        return False
    nonzero = magnitudes[magnitudes > 0]
    if nonzero.size and nonzero.min() < fmt.resolution:
        return False
    return True


def _stats(layer_name, kind, values, fmt) -> RangeStats:
    values = values.reshape(-1)
    return RangeStats(
        layer=layer_name,
        kind=kind,
        minimum=float(values.min()),
        maximum=float(values.max()),
        percentiles={p: float(np.percentile(np.abs(values), p)) for p in PROFILE_PERCENTILES},
        format=fmt,
        covered=_coverage(values, fmt),
    )


def profile(g: ModelGraph, probe: np.ndarray) -> RangeProfile:
    """Weight and activation ranges over a probe dataset (real arithmetic).

    Layers without weights are omitted from the weight profile; every layer
    contributes an activation row.
    """
    probe = np.asarray(probe, dtype=np.float64)
    if probe.size == 0:
        raise ModelError("probe dataset is empty")
    if probe.ndim == len(g.input_shape):
        probe = probe[None, ...]
    g = infer_shapes(g)
    out = RangeProfile()
    for layer in g.layers:
        if layer.weights is not None:
            values = layer.weights
            if layer.bias is not None:
                values = np.concatenate([values.reshape(-1), layer.bias.reshape(-1)])
            out.weights.append(_stats(layer.name, "weights", np.asarray(values), layer.precision))
    collected: list[list[np.ndarray]] = [[] for _ in g.layers]
    for x in probe:
        acts: list = []
        run_direct(g, x, mode="real", collect=acts)
        for store, act in zip(collected, acts):
            store.append(act.reshape(-1))
    for layer, acts in zip(g.layers, collected):
        out.activations.append(
            _stats(layer.name, "activations", np.concatenate(acts), layer.out_precision)
        )
    return out
