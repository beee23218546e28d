"""Precomputed sliding-window instruction masks and pooling lookup tables.

Each input pixel gets a K*K-bit mask recording which kernel positions (j, k)
it occupies across all sliding windows: bit b = j*K + k, LSB = position
(0, 0). The bit for position (K-1, K-1) doubles as the output trigger: the
pixel completes a window and one output can be computed.

"same" padding is handled by generating masks over the zero-padded grid, so
the engine needs no boundary branches; padding pixels become synthetic zero
items. For unit stride the mask grid collapses to (2K-1) x (2K-1) distinct
entries plus row/column translation tables, independent of the image size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from streamcnn.model import ModelError, conv_output_hw, same_pad_before


def compute_mask(v: int, u: int, h: int, w: int, k: int,
                 stride: int = 1, padding: str = "valid") -> int:
    """Mask for the pixel at (v, u) of the streamed grid.

    (h, w) are the unpadded image dims. Under "valid" the streamed grid is
    the image itself; under "same" it is the zero-padded grid and (v, u) are
    padded coordinates. Output dimensions always follow the unpadded image.
    """
    out_h, out_w = conv_output_hw(h, w, k, stride, padding)
    return _mask_for(v, u, k, stride, out_h, out_w)


def _mask_for(v: int, u: int, k: int, stride: int, out_h: int, out_w: int) -> int:
    mask = 0
    for j in range(k):
        y, ry = divmod(v - j, stride)
        if ry or not (0 <= y < out_h):
            continue
        for kk in range(k):
            x, rx = divmod(u - kk, stride)
            if rx == 0 and 0 <= x < out_w:
                mask |= 1 << (j * k + kk)
    return mask


def _translate_table(grid: int, k: int) -> np.ndarray:
    """Row/col translation onto the (2K-1)-entry compressed axis (stride 1)."""
    table = np.empty(grid, dtype=np.int32)
    for r in range(grid):
        if r <= k - 2:
            table[r] = r
        elif r <= grid - k:
            table[r] = k - 1
        else:
            table[r] = r - (grid - (2 * k - 1))
    return table


@dataclass
class InstructionArray:
    """Mask grid plus translation tables and padding geometry."""

    masks: np.ndarray           # (H', W') uint32
    row_translate: np.ndarray   # grid_h entries
    col_translate: np.ndarray   # grid_w entries
    compressed: bool
    kernel: int
    stride: int
    padding: str
    grid_h: int                 # streamed grid incl. padding
    grid_w: int
    pad_top: int
    pad_left: int
    out_h: int
    out_w: int
    fallback_warning: bool = False

    @property
    def trigger_bit(self) -> int:
        return 1 << (self.kernel * self.kernel - 1)

    def mask_at(self, v: int, u: int) -> int:
        return int(self.masks[self.row_translate[v], self.col_translate[u]])

    def expand(self) -> np.ndarray:
        """Full per-pixel mask grid (grid_h, grid_w)."""
        return self.masks[np.ix_(self.row_translate, self.col_translate)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "kernel": self.kernel,
                "stride": self.stride,
                "padding": self.padding,
                "grid": [self.grid_h, self.grid_w],
                "pad": [self.pad_top, self.pad_left],
                "out": [self.out_h, self.out_w],
                "compressed": self.compressed,
                "fallback_warning": self.fallback_warning,
                "masks": self.masks.tolist(),
                "row_translate": self.row_translate.tolist(),
                "col_translate": self.col_translate.tolist(),
            },
            indent=2,
        ) + "\n"

    @staticmethod
    def from_json(text: str) -> "InstructionArray":
        d = json.loads(text)
        return InstructionArray(
            masks=np.array(d["masks"], dtype=np.uint32),
            row_translate=np.array(d["row_translate"], dtype=np.int32),
            col_translate=np.array(d["col_translate"], dtype=np.int32),
            compressed=d["compressed"],
            kernel=d["kernel"],
            stride=d["stride"],
            padding=d["padding"],
            grid_h=d["grid"][0],
            grid_w=d["grid"][1],
            pad_top=d["pad"][0],
            pad_left=d["pad"][1],
            out_h=d["out"][0],
            out_w=d["out"][1],
            fallback_warning=d.get("fallback_warning", False),
        )


def build_instruction_array(h: int, w: int, k: int, stride: int = 1,
                            padding: str = "valid", compress: bool = False) -> InstructionArray:
    """Instruction array for an h x w image (unpadded dims) and a k x k kernel.

    Compression applies to unit stride only; otherwise (or when the grid is
    smaller than 2K-1) the full array is built and the fallback flag set.
    """
    out_h, out_w = conv_output_hw(h, w, k, stride, padding)
    if padding == "same":
        pad_top = same_pad_before(h, k, stride)
        pad_left = same_pad_before(w, k, stride)
        grid_h = max(h, (out_h - 1) * stride + k)
        grid_w = max(w, (out_w - 1) * stride + k)
    else:
        pad_top = pad_left = 0
        grid_h, grid_w = h, w

    side = 2 * k - 1
    fallback = False
    if compress and (stride != 1 or grid_h < side or grid_w < side):
        compress, fallback = False, True

    if compress:
        # The compressed grid is the instruction array of a (2K-1) x (2K-1)
        # image; on the padded grid, "same" reduces to "valid".
        masks = np.zeros((side, side), dtype=np.uint32)
        for v in range(side):
            for u in range(side):
                masks[v, u] = _mask_for(v, u, k, 1, side - k + 1, side - k + 1)
        row_t = _translate_table(grid_h, k)
        col_t = _translate_table(grid_w, k)
    else:
        masks = np.zeros((grid_h, grid_w), dtype=np.uint32)
        for v in range(grid_h):
            for u in range(grid_w):
                masks[v, u] = _mask_for(v, u, k, stride, out_h, out_w)
        row_t = np.arange(grid_h, dtype=np.int32)
        col_t = np.arange(grid_w, dtype=np.int32)

    return InstructionArray(
        masks=masks, row_translate=row_t, col_translate=col_t,
        compressed=compress, kernel=k, stride=stride, padding=padding,
        grid_h=grid_h, grid_w=grid_w, pad_top=pad_top, pad_left=pad_left,
        out_h=out_h, out_w=out_w, fallback_warning=fallback,
    )


@dataclass
class PoolLookup:
    """Per-row and per-column window index + last-in-window flag.

    H + W entries total; index -1 marks trailing rows/cols that belong to no
    window (dropped by the floor-division output size).
    """

    row_index: np.ndarray
    row_last: np.ndarray
    col_index: np.ndarray
    col_last: np.ndarray
    pool: int

    @property
    def entries(self) -> int:
        return len(self.row_index) + len(self.col_index)

    @property
    def out_h(self) -> int:
        return int(self.row_index.max() + 1)

    @property
    def out_w(self) -> int:
        return int(self.col_index.max() + 1)


def _axis_table(n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    windows = n // p
    index = np.full(n, -1, dtype=np.int32)
    last = np.zeros(n, dtype=bool)
    for r in range(windows * p):
        index[r] = r // p
        last[r] = (r % p) == p - 1
    return index, last


def build_pool_lookup(h: int, w: int, p: int) -> PoolLookup:
    if p < 1:
        raise ModelError(f"pool size must be >= 1, got {p}")
    if h // p == 0 or w // p == 0:
        raise ModelError(f"pool size {p} exceeds input {h}x{w}")
    ri, rl = _axis_table(h, p)
    ci, cl = _axis_table(w, p)
    return PoolLookup(row_index=ri, row_last=rl, col_index=ci, col_last=cl, pool=p)
