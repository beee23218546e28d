"""Streaming-dataflow CNN inference engine and compression toolkit."""

from streamcnn.fixedpoint import (
    DEFAULT_FORMAT,
    AccumulatorOverflow,
    FxFormat,
    FxValue,
    QuantizerSpec,
    apply_quantizer,
    fx_mac,
    quantize,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_FORMAT",
    "AccumulatorOverflow",
    "FxFormat",
    "FxValue",
    "QuantizerSpec",
    "apply_quantizer",
    "fx_mac",
    "quantize",
    "__version__",
]
