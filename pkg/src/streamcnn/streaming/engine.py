"""Streaming layer processors, pipeline schedulers and cycle accounting.

Layers communicate through bounded channels carrying C-element pixel
vectors. A convolution keeps K*K window-buffer FIFOs; each arriving pixel is
pushed into the buffers named by its instruction mask and, when the trigger
bit fires, the buffer fronts form the K*K*C column vector for one
matrix-vector product (the dense kernel). Zero items for "same" padding are
injected by the instruction geometry, never by branches in the data path.

In fixed mode the items in flight are raw int64 mantissa vectors; every
processor knows its input and output formats up front, so the wire carries
plain arrays in both modes.

Two execution modes produce bit-identical outputs and statistics: a
deterministic round-robin scheduler (default) and one worker thread per
layer connected by blocking queues.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from streamcnn.fixedpoint import (
    FxFormat,
    FxTensor,
    quantize_tensor,
    requantize,
)
from streamcnn.model import ModelError, ModelGraph, infer_shapes
from streamcnn.reference import (
    dense_direct,
    relu as relu_ref,
    scale_bias as scale_bias_ref,
    softmax as softmax_ref,
)
from streamcnn.streaming.fifo import FifoChannel
from streamcnn.streaming.instructions import (
    InstructionArray,
    build_instruction_array,
    build_pool_lookup,
)

#: cycles between the pipeline accepting an input image and being ready
#: for the next one, on top of the slowest layer's consumption; fitted once
#: against the reference initiation intervals.
PIPELINE_DEPTH = 5
#: cycles to flush the last result out of the back of the pipeline.
DRAIN_DEPTH = 6


class DeadlockError(RuntimeError):
    pass


@dataclass
class CycleStats:
    layer: str
    items_in: int = 0
    items_out: int = 0
    consumption_cycles: int = 0
    window_fifo_peak: int = 0

    def as_dict(self) -> dict:
        return {
            "layer": self.layer,
            "items_in": self.items_in,
            "items_out": self.items_out,
            "consumption_cycles": self.consumption_cycles,
            "window_fifo_peak": self.window_fifo_peak,
        }


@dataclass
class PipelineStats:
    layers: list[CycleStats]
    ii_cycles: int = 0
    latency_cycles: int = 0

    def as_dict(self) -> dict:
        return {
            "layers": [s.as_dict() for s in self.layers],
            "ii_cycles": self.ii_cycles,
            "latency_cycles": self.latency_cycles,
        }


def window_fifo_capacity(k: int, grid_w: int) -> int:
    """Sufficient window-buffer depth: (K-1)*(W+1)+1 for streamed width W."""
    return (k - 1) * (grid_w + 1) + 1


# ---------------------------------------------------------------------------
# layer processors: feed(item) -> list of output items


class _Processor:
    def __init__(self, name: str):
        self.stats = CycleStats(layer=name)
        self.name = name

    def feed(self, item) -> list:
        raise NotImplementedError


class ConvStream(_Processor):
    def __init__(self, layer, in_shape, mode: str, in_format: Optional[FxFormat] = None,
                 fifo_capacity: Optional[int] = None, corrupt_mask_bit: Optional[int] = None):
        super().__init__(layer.name)
        self.mode = mode
        k, c = layer.kernel, in_shape[2]
        self.k, self.c = k, c
        self.ia = build_instruction_array(
            in_shape[0], in_shape[1], k, layer.stride, layer.padding,
            compress=(layer.stride == 1),
        )
        if corrupt_mask_bit is not None:
            masks = self.ia.masks.copy()
            v, u = masks.shape[0] // 2, masks.shape[1] // 2
            masks[v, u] ^= np.uint32(1 << corrupt_mask_bit)
            self.ia.masks = masks
        cap = fifo_capacity if fifo_capacity is not None else window_fifo_capacity(k, self.ia.grid_w)
        self.window = [
            FifoChannel(f"{layer.name}.win[{j}][{kk}]", cap)
            for j in range(k) for kk in range(k)
        ]
        # weight matrix rows ordered [j][k][c] to match the column vector
        wm = layer.weights.reshape(k * k * c, layer.filters)
        self.in_format = in_format
        if mode == "fixed":
            self.wm = quantize_tensor(wm, layer.precision)
            self.bias = quantize_tensor(layer.bias, layer.precision) if layer.bias is not None else None
            self.zero_item = np.zeros(c, dtype=np.int64)
        else:
            self.wm = wm
            self.bias = layer.bias
            self.zero_item = np.zeros(c, dtype=np.float64)
        self.out_format = layer.out_precision
        self.pos = 0  # row-major position on the padded grid
        self.real_rows = in_shape[0]
        self.real_cols = in_shape[1]

    def _is_pad(self, v: int, u: int) -> bool:
        ia = self.ia
        return not (ia.pad_top <= v < ia.pad_top + self.real_rows
                    and ia.pad_left <= u < ia.pad_left + self.real_cols)

    def _grid_step(self, vec) -> list:
        ia = self.ia
        v, u = divmod(self.pos, ia.grid_w)
        self.pos += 1
        mask = ia.mask_at(v, u)
        for b in range(self.k * self.k):
            if mask >> b & 1:
                self.window[b].push(vec)
        if not mask & ia.trigger_bit:
            return []
        column = np.concatenate([f.pop() for f in self.window])
        if self.mode == "fixed":
            out = dense_direct(FxTensor(column, self.in_format), self.wm, self.bias,
                               out_format=self.out_format)
            return [out.raw]
        return [dense_direct(column, self.wm, self.bias)]

    def feed(self, item) -> list:
        self.stats.items_in += 1
        self.stats.consumption_cycles += 1
        ia = self.ia
        outs = []
        # synthetic zero items for padding positions that precede this pixel
        while True:
            v, u = divmod(self.pos, ia.grid_w)
            if not self._is_pad(v, u):
                break
            outs.extend(self._grid_step(self.zero_item))
        outs.extend(self._grid_step(item))
        if self.stats.items_in == self.real_rows * self.real_cols:
            while self.pos < ia.grid_h * ia.grid_w:
                outs.extend(self._grid_step(self.zero_item))
        self.stats.items_out += len(outs)
        self.stats.window_fifo_peak = max(f.peak for f in self.window)
        return outs


class PoolStream(_Processor):
    """Pooling over a row of partial windows: one W/p x C result buffer."""

    def __init__(self, layer, in_shape, mode: str, kind: str,
                 in_format: Optional[FxFormat] = None):
        super().__init__(layer.name)
        self.kind = kind
        self.mode = mode
        self.p = layer.pool
        self.lookup = build_pool_lookup(in_shape[0], in_shape[1], layer.pool)
        self.c = in_shape[2]
        dtype = np.int64 if mode == "fixed" else np.float64
        self.partial = np.zeros((self.lookup.out_w, self.c), dtype=dtype)
        self.fresh = np.ones(self.lookup.out_w, dtype=bool)
        self.in_format = in_format
        self.out_format = layer.out_precision
        self.pos = 0

    def _emit(self, slot: int):
        acc = self.partial[slot]
        self.fresh[slot] = True
        if self.kind == "max":
            if self.mode == "fixed":
                return requantize(FxTensor(acc.copy(), self.in_format), self.out_format).raw
            return acc.copy()
        if self.mode == "fixed":
            values = acc.astype(np.float64) * self.in_format.resolution * (1.0 / (self.p * self.p))
            return quantize_tensor(values, self.out_format).raw
        return acc * (1.0 / (self.p * self.p))

    def feed(self, item) -> list:
        lk = self.lookup
        r, col = divmod(self.pos, len(lk.col_index))
        self.pos += 1
        self.stats.items_in += 1
        self.stats.consumption_cycles += 1
        wr, wc = lk.row_index[r], lk.col_index[col]
        if wr < 0 or wc < 0:
            return []  # remainder row/col dropped by the floor output size
        if self.fresh[wc]:
            self.partial[wc] = item
            self.fresh[wc] = False
        elif self.kind == "max":
            np.maximum(self.partial[wc], item, out=self.partial[wc])
        else:
            self.partial[wc] += item
        if lk.row_last[r] and lk.col_last[col]:
            out = self._emit(wc)
            self.stats.items_out += 1
            return [out]
        return []


class Elementwise(_Processor):
    """relu / softmax / scale_bias applied to each stream item."""

    def __init__(self, layer, mode: str, in_format: Optional[FxFormat] = None):
        super().__init__(layer.name)
        self.kind = layer.kind
        self.mode = mode
        self.in_format = in_format
        self.out_format = layer.out_precision
        if layer.kind == "scale_bias":
            if mode == "fixed":
                self.gamma = quantize_tensor(layer.weights, layer.precision)
                self.beta = quantize_tensor(layer.bias, layer.precision)
            else:
                self.gamma, self.beta = layer.weights, layer.bias

    def feed(self, item) -> list:
        self.stats.items_in += 1
        self.stats.consumption_cycles += 1
        fixed = self.mode == "fixed"
        t = FxTensor(item, self.in_format) if fixed else item
        if self.kind == "relu":
            out = relu_ref(t, self.out_format)
        elif self.kind == "softmax":
            out = softmax_ref(t, self.out_format)
        else:
            out = scale_bias_ref(t, self.gamma, self.beta, self.out_format)
        self.stats.items_out += 1
        return [out.raw if fixed else out]


class FlattenStream(_Processor):
    """Collects the H*W pixel vectors into one flat item; format passes through."""

    def __init__(self, layer, in_shape):
        super().__init__(layer.name)
        self.expect = int(np.prod(in_shape[:-1])) if len(in_shape) == 3 else 1
        self.parts: list = []

    def feed(self, item) -> list:
        self.stats.items_in += 1
        self.stats.consumption_cycles += 1
        self.parts.append(item)
        if len(self.parts) == self.expect:
            out = np.concatenate(self.parts)
            self.parts = []
            self.stats.items_out += 1
            return [out]
        return []


class DenseStream(_Processor):
    def __init__(self, layer, mode: str, in_format: Optional[FxFormat] = None):
        super().__init__(layer.name)
        self.mode = mode
        self.in_format = in_format
        if mode == "fixed":
            self.w = quantize_tensor(layer.weights, layer.precision)
            self.b = quantize_tensor(layer.bias, layer.precision) if layer.bias is not None else None
        else:
            self.w, self.b = layer.weights, layer.bias
        self.out_format = layer.out_precision

    def feed(self, item) -> list:
        self.stats.items_in += 1
        self.stats.consumption_cycles += 1
        self.stats.items_out += 1
        if self.mode == "fixed":
            t = FxTensor(item, self.in_format)
            return [dense_direct(t, self.w, self.b, out_format=self.out_format).raw]
        return [dense_direct(item, self.w, self.b)]


# ---------------------------------------------------------------------------
# pipeline construction and schedulers


def format_chain(g: ModelGraph) -> list[FxFormat]:
    """Item format entering each layer in fixed mode.

    Flatten reshapes without requantizing, so it forwards its input format;
    every other layer emits items in its out_precision.
    """
    fmt = g.input_precision
    fmts = []
    for layer in g.layers:
        fmts.append(fmt)
        if layer.kind != "flatten":
            fmt = layer.out_precision
    return fmts


def output_format(g: ModelGraph) -> FxFormat:
    chain = format_chain(g)
    last = g.layers[-1]
    return chain[-1] if last.kind == "flatten" else last.out_precision


def _make_processor(layer, in_shape, mode, in_format, fifo_capacity=None,
                    corrupt_mask_bit=None, corrupt_target: Optional[str] = None):
    corrupt = corrupt_mask_bit if corrupt_target in (None, layer.name) else None
    if layer.kind == "conv2d":
        return ConvStream(layer, in_shape, mode, in_format, fifo_capacity, corrupt)
    if layer.kind == "maxpool":
        return PoolStream(layer, in_shape, mode, "max", in_format)
    if layer.kind == "avgpool":
        return PoolStream(layer, in_shape, mode, "avg", in_format)
    if layer.kind in ("relu", "softmax", "scale_bias"):
        return Elementwise(layer, mode, in_format)
    if layer.kind == "flatten":
        return FlattenStream(layer, in_shape)
    if layer.kind == "dense":
        return DenseStream(layer, mode, in_format)
    raise ModelError(f"{layer.name}: unknown layer kind {layer.kind!r}")


def stream_items(g: ModelGraph, x: np.ndarray, mode: str) -> list:
    """Input tensor as a row-major stream of C-element pixel vectors."""
    if mode == "fixed":
        raw = quantize_tensor(x, g.input_precision).raw
    else:
        raw = np.asarray(x, dtype=np.float64)
    if raw.ndim == 1:
        return [raw]
    return [raw[v, u, :] for v in range(raw.shape[0]) for u in range(raw.shape[1])]


def _default_channel_capacity(in_shape) -> int:
    if len(in_shape) == 3:
        return max(4, 2 * in_shape[1])
    return 2


def _assemble_output(items: list, out_shape: tuple, mode: str, fmt: Optional[FxFormat]) -> np.ndarray:
    arr = np.stack(items).reshape(out_shape) if len(out_shape) == 3 else items[0]
    if mode == "fixed":
        return FxTensor(np.asarray(arr), fmt).values
    return np.asarray(arr, dtype=np.float64)


class _Task:
    def __init__(self, proc, in_ch: FifoChannel, out_ch: Optional[FifoChannel]):
        self.proc = proc
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.pending: list = []

    def _drain(self, sink: list) -> bool:
        moved = False
        while self.pending and (self.out_ch is None or self.out_ch.can_push()):
            out = self.pending.pop(0)
            if self.out_ch is None:
                sink.append(out)
            else:
                self.out_ch.push(out)
            moved = True
        return moved

    def step(self, sink: list) -> bool:
        progressed = self._drain(sink)
        if not self.pending and self.in_ch.can_pop():
            self.pending.extend(self.proc.feed(self.in_ch.pop()))
            self._drain(sink)
            progressed = True
        return progressed


def _run_coroutine(procs, items, channel_caps) -> list:
    channels = [FifoChannel("input", channel_caps[0])]
    for i, proc in enumerate(procs[:-1]):
        channels.append(FifoChannel(f"{proc.name}.out", channel_caps[i + 1]))
    tasks = [
        _Task(proc, channels[i], channels[i + 1] if i + 1 < len(procs) else None)
        for i, proc in enumerate(procs)
    ]
    sink: list = []
    feed_idx = 0
    while True:
        progress = False
        while feed_idx < len(items) and channels[0].can_push():
            channels[0].push(items[feed_idx])
            feed_idx += 1
            progress = True
        for task in tasks:
            if task.step(sink):
                progress = True
        if feed_idx == len(items) and not any(len(ch) for ch in channels) \
                and not any(t.pending for t in tasks):
            return sink
        if not progress:
            blocked = next(
                (ch.name for ch in channels if not ch.can_push()),
                next((ch.name for ch in channels if len(ch)), channels[0].name),
            )
            raise DeadlockError(f"no task can make progress; blocking FIFO: {blocked!r}")


def _run_threads(procs, items, channel_caps) -> list:
    qs = [queue.Queue(maxsize=max(1, channel_caps[i])) for i in range(len(procs))]
    sink_q: queue.Queue = queue.Queue()
    stop = object()

    def worker(i):
        proc = procs[i]
        out_q = qs[i + 1] if i + 1 < len(procs) else sink_q
        while True:
            item = qs[i].get()
            if item is stop:
                out_q.put(stop)
                return
            for out in proc.feed(item):
                out_q.put(out)

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(len(procs))]
    for t in threads:
        t.start()
    for item in items:
        qs[0].put(item)
    qs[0].put(stop)
    sink = []
    while True:
        item = sink_q.get()
        if item is stop:
            break
        sink.append(item)
    for t in threads:
        t.join()
    return sink


def conv2d_stream(x_stream: list, layer, in_shape, mode: str = "real",
                  in_format: Optional[FxFormat] = None,
                  ia: Optional[InstructionArray] = None,
                  fifo_capacity: Optional[int] = None) -> tuple[list, CycleStats]:
    """Run one convolution layer over a pixel-vector stream."""
    proc = ConvStream(layer, in_shape, mode, in_format, fifo_capacity)
    if ia is not None:
        proc.ia = ia
    outs = []
    for item in x_stream:
        outs.extend(proc.feed(item))
    return outs, proc.stats


def pool_stream(x_stream: list, layer, in_shape, mode: str = "real",
                kind: str = "max", in_format: Optional[FxFormat] = None) -> tuple[list, CycleStats]:
    proc = PoolStream(layer, in_shape, mode, kind, in_format)
    outs = []
    for item in x_stream:
        outs.extend(proc.feed(item))
    return outs, proc.stats


def run_stream(
    g: ModelGraph,
    x: np.ndarray,
    mode: str = "real",
    scheduler: str = "coroutine",
    channel_capacity: Optional[dict | int] = None,
    pipeline_depth: int = PIPELINE_DEPTH,
    drain_depth: int = DRAIN_DEPTH,
    window_fifo_capacity_override: Optional[int] = None,
    corrupt_mask_bit: Optional[int] = None,
    corrupt_layer: Optional[str] = None,
) -> tuple[np.ndarray, PipelineStats]:
    """Evaluate the graph as a streaming pipeline of bounded FIFO channels.

    Outputs and statistics are identical across schedulers. The reported II
    is the slowest layer's consumption cycles plus the pipeline depth
    constant; consumption counts the items read from the layer's own input.
    """
    if mode not in ("real", "fixed"):
        raise ModelError(f"unknown mode {mode!r}")
    if not g.input_shapes:
        g = infer_shapes(g)
    if tuple(np.asarray(x).shape) != tuple(g.input_shape):
        raise ModelError(f"input shape {np.asarray(x).shape} != model input {tuple(g.input_shape)}")

    fmts = format_chain(g) if mode == "fixed" else [None] * len(g.layers)
    procs = [
        _make_processor(layer, in_shape, mode, fmt, window_fifo_capacity_override,
                        corrupt_mask_bit, corrupt_layer)
        for layer, in_shape, fmt in zip(g.layers, g.input_shapes, fmts)
    ]

    caps = []
    for i in range(len(g.layers)):
        default = _default_channel_capacity(g.input_shapes[i])
        if isinstance(channel_capacity, int):
            caps.append(channel_capacity)
        elif isinstance(channel_capacity, dict):
            name = "input" if i == 0 else f"{g.layers[i - 1].name}.out"
            caps.append(channel_capacity.get(name, default))
        else:
            caps.append(default)

    items = stream_items(g, x, mode)
    if scheduler == "coroutine":
        sink = _run_coroutine(procs, items, caps)
    elif scheduler == "threads":
        sink = _run_threads(procs, items, caps)
    else:
        raise ModelError(f"unknown scheduler {scheduler!r}")

    out_fmt = output_format(g) if mode == "fixed" else None
    out = _assemble_output(sink, g.output_shape, mode, out_fmt)

    stats = [p.stats for p in procs]
    ii = max(s.consumption_cycles for s in stats) + pipeline_depth
    pipeline = PipelineStats(layers=stats, ii_cycles=ii, latency_cycles=ii + drain_depth)
    return out, pipeline
