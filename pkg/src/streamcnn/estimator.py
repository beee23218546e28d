"""Static cost model: weights, FLOPs, bit sizes, energy, latency/II and
FPGA resource heuristics.

Multiplications by exact-zero weights are elided everywhere (the firmware
constant-folds them away), so FLOPs, energy, multiplier and DSP counts all
shrink under pruning while bit sizes and buffer estimates do not grow.

The DSP inverse-reuse law is kept exact: a layer with M live multipliers and
reuse factor R reports M/R DSPs (a real number), so dsp * R == M identically
for widths above the DSP threshold. LUT/FF numbers are coarse trend
heuristics, not synthesis predictions.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Optional

import numpy as np

from streamcnn.compress import PrecisionConfig, effective_weight_bits
from streamcnn.model import ModelError, ModelGraph, infer_shapes
from streamcnn import svg

#: widths strictly above this use hardened DSP multipliers; at or below,
#: multiplications migrate to LUTs.
DSP_THRESHOLD_BITS = 10

#: fitted once against the reference initiation intervals / latencies.
PIPELINE_DEPTH = 5
DRAIN_DEPTH = 6

BRAM_BITS = 36 * 1024

SWEEP_WIDTHS = tuple(range(1, 17))
SWEEP_REUSE = (1, 2, 3, 4, 6)


def _data_file(name: str) -> Path:
    return Path(str(importlib_resources.files("streamcnn").joinpath("data", name)))


@dataclass(frozen=True)
class EnergyTable:
    """Per-operation energies (pJ) as a function of operand bit width."""

    name: str
    int_mult_pj_32: float
    int_add_pj_32: float
    int_mult_exponent: float
    int_add_exponent: float
    fp32_mult_pj: float
    fp32_add_pj: float

    def __post_init__(self):
        for v in (self.int_mult_pj_32, self.int_add_pj_32, self.fp32_mult_pj, self.fp32_add_pj):
            if v <= 0:
                raise ModelError("energy table entries must be > 0")

    def mult_pj(self, bits: int) -> float:
        return self.int_mult_pj_32 * (bits / 32.0) ** self.int_mult_exponent

    def add_pj(self, bits: int) -> float:
        return self.int_add_pj_32 * (bits / 32.0) ** self.int_add_exponent

    def mac_pj(self, bits: Optional[int]) -> float:
        """None = unquantized float32 operands."""
        if bits is None:
            return self.fp32_mult_pj + self.fp32_add_pj
        return self.mult_pj(bits) + self.add_pj(bits)

    @staticmethod
    def load(path: str | Path) -> "EnergyTable":
        d = json.loads(Path(path).read_text())
        return EnergyTable(
            name=d.get("name", "energy"),
            int_mult_pj_32=d["int_mult_pj_32"],
            int_add_pj_32=d["int_add_pj_32"],
            int_mult_exponent=d.get("int_mult_exponent", 2.0),
            int_add_exponent=d.get("int_add_exponent", 1.0),
            fp32_mult_pj=d["fp32_mult_pj"],
            fp32_add_pj=d["fp32_add_pj"],
        )

    @staticmethod
    def default() -> "EnergyTable":
        return EnergyTable.load(_data_file("energy_45nm.json"))


@dataclass(frozen=True)
class DeviceCapacity:
    name: str
    dsp: int
    lut: int
    ff: int
    bram36: int

    @staticmethod
    def load(path: str | Path) -> "DeviceCapacity":
        d = json.loads(Path(path).read_text())
        return DeviceCapacity(d.get("name", "device"), d["dsp"], d["lut"], d["ff"], d["bram36"])

    @staticmethod
    def default() -> "DeviceCapacity":
        return DeviceCapacity.load(_data_file("vu9p.json"))


@dataclass
class LayerCost:
    layer: str
    kind: str
    input_shape: tuple
    weights: int = 0            # trainable parameters incl. bias
    multipliers: int = 0        # live (nonzero-weight) multiply sites
    flops: float = 0.0
    bits: int = 0
    energy_nj: float = 0.0
    cycles: int = 0
    dsp: float = 0.0
    lut: float = 0.0
    ff: float = 0.0
    bram: float = 0.0

    def as_dict(self) -> dict:
        return {
            "layer": self.layer,
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "weights": self.weights,
            "multipliers": self.multipliers,
            "flops": self.flops,
            "bits": self.bits,
            "energy_nj": self.energy_nj,
            "cycles": self.cycles,
            "dsp": self.dsp,
            "lut": self.lut,
            "ff": self.ff,
            "bram": self.bram,
        }


@dataclass
class CostReport:
    model: str
    clock_mhz: float
    layers: list[LayerCost] = field(default_factory=list)
    ii_cycles: int = 0
    latency_cycles: int = 0
    latency_us: float = 0.0
    reuse: dict[str, int] = field(default_factory=dict)
    precisions: dict[str, str] = field(default_factory=dict)
    energy_table: str = ""
    device: Optional[DeviceCapacity] = None

    def total(self, attr: str) -> float:
        return float(sum(getattr(l, attr) for l in self.layers))

    def utilization(self) -> dict[str, float]:
        if self.device is None:
            return {}
        return {
            "dsp": 100.0 * self.total("dsp") / self.device.dsp,
            "lut": 100.0 * self.total("lut") / self.device.lut,
            "ff": 100.0 * self.total("ff") / self.device.ff,
            "bram": 100.0 * self.total("bram") / self.device.bram36,
        }

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "clock_mhz": self.clock_mhz,
            "layers": [l.as_dict() for l in self.layers],
            "totals": {
                "weights": self.total("weights"),
                "multipliers": self.total("multipliers"),
                "flops": self.total("flops"),
                "bits": self.total("bits"),
                "energy_nj": self.total("energy_nj"),
                "dsp": self.total("dsp"),
                "lut": self.total("lut"),
                "ff": self.total("ff"),
                "bram": self.total("bram"),
            },
            "ii_cycles": self.ii_cycles,
            "latency_cycles": self.latency_cycles,
            "latency_us": self.latency_us,
            "utilization_pct": self.utilization(),
            "config": {
                "reuse": self.reuse,
                "precisions": self.precisions,
                "energy_table": self.energy_table,
            },
        }


# ---------------------------------------------------------------------------
# per-metric operations

def _nonzero_weights(layer) -> int:
    if layer.weights is None:
        return 0
    return int(np.count_nonzero(layer.weights))


def _mult_positions(layer, out_shape) -> int:
    if layer.kind == "conv2d":
        return out_shape[0] * out_shape[1]
    if layer.kind == "scale_bias":
        return int(np.prod(out_shape[:-1])) if len(out_shape) == 3 else 1
    return 1


def count_weights_flops(g: ModelGraph) -> dict[str, tuple[int, float]]:
    """Per-layer (trainable weights, FLOPs); zero-weight MACs are elided."""
    g = infer_shapes(g)
    out = {}
    for layer, in_shape, out_shape in zip(g.layers, g.input_shapes, g.output_shapes):
        if layer.kind in ("conv2d", "dense"):
            params = layer.weight_count(in_shape) + layer.bias_count(in_shape)
            live = _nonzero_weights(layer) if layer.weights is not None else layer.weight_count(in_shape)
            flops = 2.0 * live * _mult_positions(layer, out_shape)
            out[layer.name] = (params, flops)
    return out


def bit_size(g: ModelGraph, config: Optional[PrecisionConfig] = None) -> dict[str, int]:
    """Storage bits per layer: parameter count times per-weight width."""
    g = infer_shapes(g)
    widths = effective_weight_bits(g, config)
    out = {}
    for layer, in_shape in zip(g.layers, g.input_shapes):
        if layer.weights is None:
            out[layer.name] = 0
            continue
        w_bits = widths[layer.name]
        out[layer.name] = (layer.weight_count(in_shape) + layer.bias_count(in_shape)) * w_bits
    return out


def energy(g: ModelGraph, table: Optional[EnergyTable] = None,
           mode: str = "fixed") -> dict[str, float]:
    """Per-layer energy in nJ: live MAC count times per-MAC energy.

    mode "fixed" prices each MAC at the layer's weight width; "float32"
    prices every MAC at fp32 (the unquantized-model estimate).
    """
    table = table or EnergyTable.default()
    g = infer_shapes(g)
    out = {}
    for layer, out_shape in zip(g.layers, g.output_shapes):
        if layer.weights is None:
            continue
        macs = _nonzero_weights(layer) * _mult_positions(layer, out_shape)
        bits = None if mode == "float32" else layer.precision.total_bits
        out[layer.name] = macs * table.mac_pj(bits) / 1000.0
    return out


def latency_ii(g: ModelGraph, reuse: Optional[dict[str, int] | int] = None,
               clock_mhz: float = 200.0,
               pipeline_depth: int = PIPELINE_DEPTH,
               drain_depth: int = DRAIN_DEPTH) -> tuple[dict[str, int], int, int, float]:
    """Per-layer cycles, II, total latency cycles and latency in microseconds.

    A layer consumes one cycle per input stream item, repeated ceil(R) times
    when multipliers are shared (eta = 1: full parallelism at R = 1).
    """
    g = infer_shapes(g)
    cycles = {}
    for layer, in_shape in zip(g.layers, g.input_shapes):
        r = _reuse_for(layer.name, reuse, layer.reuse_factor)
        items = in_shape[0] * in_shape[1] if len(in_shape) == 3 else 1
        cycles[layer.name] = items * max(1, math.ceil(r))
    if not cycles:
        return {}, 0, 0, 0.0
    ii = max(cycles.values()) + pipeline_depth
    latency = ii + drain_depth
    return cycles, ii, latency, latency / clock_mhz


def _reuse_for(name: str, reuse, layer_default: int) -> int:
    if isinstance(reuse, int):
        return max(1, reuse)
    if isinstance(reuse, dict):
        return max(1, reuse.get(name, layer_default))
    return max(1, layer_default)


def resources(g: ModelGraph, reuse: Optional[dict[str, int] | int] = None,
              dsp_threshold: int = DSP_THRESHOLD_BITS) -> dict[str, dict[str, float]]:
    """DSP/LUT/FF/BRAM heuristics per layer.

    DSPs follow the exact inverse law M/R above the width threshold; below
    it, multipliers map to LUTs. BRAM counts window-buffer and channel FIFO
    storage in 36 kb blocks and does not depend on R.
    """
    from streamcnn.streaming.engine import window_fifo_capacity

    g = infer_shapes(g)
    out = {}
    for layer, in_shape, out_shape in zip(g.layers, g.input_shapes, g.output_shapes):
        r = _reuse_for(layer.name, reuse, layer.reuse_factor)
        m = _nonzero_weights(layer)
        width = layer.precision.total_bits
        live = m / r if m else 0.0
        if width > dsp_threshold:
            dsp = live
            lut = 30.0 + 2.0 * width * live if m else 0.0
        else:
            dsp = 0.0
            lut = 30.0 + width * width * live if m else 0.0
        ff = 2.0 * width * live
        bram_bits = 0
        if layer.kind == "conv2d":
            k = layer.kernel
            cap = window_fifo_capacity(k, in_shape[1])
            bram_bits += k * k * cap * in_shape[2] * width
        if len(out_shape) == 3:
            bram_bits += 2 * out_shape[1] * out_shape[2] * layer.out_precision.total_bits
        out[layer.name] = {
            "dsp": dsp,
            "lut": lut,
            "ff": ff,
            "bram": bram_bits / BRAM_BITS,
        }
    return out


# ---------------------------------------------------------------------------
# assembled report + serialization


def estimate(g: ModelGraph,
             reuse: Optional[dict[str, int] | int] = None,
             clock_mhz: float = 200.0,
             energy_table: Optional[EnergyTable] = None,
             device: Optional[DeviceCapacity] = None,
             precision_config: Optional[PrecisionConfig] = None,
             energy_mode: str = "fixed") -> CostReport:
    g = infer_shapes(g)
    table = energy_table or EnergyTable.default()
    device = device or DeviceCapacity.default()
    wf = count_weights_flops(g)
    bits = bit_size(g, precision_config)
    en = energy(g, table, energy_mode)
    cycles, ii, latency, us = latency_ii(g, reuse, clock_mhz)
    res = resources(g, reuse)

    report = CostReport(
        model=g.name,
        clock_mhz=clock_mhz,
        ii_cycles=ii,
        latency_cycles=latency,
        latency_us=us,
        energy_table=table.name,
        device=device,
    )
    for layer, in_shape, out_shape in zip(g.layers, g.input_shapes, g.output_shapes):
        weights, flops = wf.get(layer.name, (0, 0.0))
        cost = LayerCost(
            layer=layer.name,
            kind=layer.kind,
            input_shape=in_shape,
            weights=weights,
            multipliers=_nonzero_weights(layer),
            flops=flops,
            bits=bits.get(layer.name, 0),
            energy_nj=en.get(layer.name, 0.0),
            cycles=cycles.get(layer.name, 0),
            **res.get(layer.name, {}),
        )
        report.layers.append(cost)
        report.reuse[layer.name] = _reuse_for(layer.name, reuse, layer.reuse_factor)
        report.precisions[layer.name] = str(layer.precision)
    return report


CSV_COLUMNS = ("layer", "kind", "weights", "multipliers", "flops", "mflops",
               "bits", "energy_nj", "cycles", "dsp", "lut", "ff", "bram")


def report_to_csv(report: CostReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for l in report.layers:
        writer.writerow([
            l.layer, l.kind, l.weights, l.multipliers,
            f"{l.flops:.0f}", f"{l.flops / 1e6:.3f}",
            l.bits, f"{l.energy_nj:.3f}", l.cycles,
            f"{l.dsp:.2f}", f"{l.lut:.1f}", f"{l.ff:.1f}", f"{l.bram:.3f}",
        ])
    writer.writerow([
        "total", "", int(report.total("weights")), int(report.total("multipliers")),
        f"{report.total('flops'):.0f}", f"{report.total('flops') / 1e6:.3f}",
        int(report.total("bits")), f"{report.total('energy_nj'):.3f}",
        report.latency_cycles,
        f"{report.total('dsp'):.2f}", f"{report.total('lut'):.1f}",
        f"{report.total('ff'):.1f}", f"{report.total('bram'):.3f}",
    ])
    return buf.getvalue()


def report_from_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return rows


def report_to_json(report: CostReport) -> str:
    return json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(report: CostReport, out_dir: str | Path, formats: tuple[str, ...] = ("json",),
                stem: str = "cost_report") -> list[Path]:
    """Serialize a report deterministically; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        if fmt == "json":
            path.write_text(report_to_json(report))
        elif fmt == "csv":
            path.write_text(report_to_csv(report))
        elif fmt == "svg":
            chart = svg.line_chart(
                f"{report.model}: per-layer cost",
                "layer index", "energy [nJ]",
                {"energy": (list(range(len(report.layers))),
                            [max(l.energy_nj, 1e-6) for l in report.layers])},
                log_y=True,
            )
            path.write_text(chart)
        else:
            raise ModelError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# sweeps over bit width and reuse factor

def sweep(g: ModelGraph,
          widths: tuple[int, ...] = SWEEP_WIDTHS,
          reuses: tuple[int, ...] = SWEEP_REUSE,
          integer_bits: int = 6,
          clock_mhz: float = 200.0,
          energy_table: Optional[EnergyTable] = None) -> list[dict]:
    """Cost reports over the width x reuse grid (uniform precision)."""
    from streamcnn.compress import ptq, uniform_precision_config

    points = []
    for width in widths:
        cfg = uniform_precision_config(width, min(integer_bits, width))
        qg = ptq(g, cfg)
        for r in reuses:
            rep = estimate(qg, reuse=r, clock_mhz=clock_mhz, energy_table=energy_table,
                           precision_config=cfg)
            points.append({
                "width": width,
                "reuse": r,
                "latency_cycles": rep.latency_cycles,
                "ii_cycles": rep.ii_cycles,
                "latency_us": rep.latency_us,
                "dsp": rep.total("dsp"),
                "lut": rep.total("lut"),
                "ff": rep.total("ff"),
                "bram": rep.total("bram"),
                "energy_nj": rep.total("energy_nj"),
                "bits": rep.total("bits"),
            })
    return points


def sweep_to_csv(points: list[dict]) -> str:
    buf = io.StringIO()
    cols = ("width", "reuse", "latency_cycles", "ii_cycles", "latency_us",
            "dsp", "lut", "ff", "bram", "energy_nj", "bits")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for p in points:
        writer.writerow([
            p["width"], p["reuse"], p["latency_cycles"], p["ii_cycles"],
            f"{p['latency_us']:.4f}", f"{p['dsp']:.2f}", f"{p['lut']:.1f}",
            f"{p['ff']:.1f}", f"{p['bram']:.3f}", f"{p['energy_nj']:.3f}",
            int(p["bits"]),
        ])
    return buf.getvalue()


def emit_sweep(points: list[dict], out_dir: str | Path,
               formats: tuple[str, ...] = ("csv", "svg")) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out_dir / "sweep.csv"
        path.write_text(sweep_to_csv(points))
        written.append(path)
    if "json" in formats:
        path = out_dir / "sweep.json"
        path.write_text(json.dumps(points, indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "svg" in formats:
        reuses = sorted({p["reuse"] for p in points})
        widths = sorted({p["width"] for p in points})
        for metric, label, logy in (
            ("dsp", "DSP count", True),
            ("lut", "LUT count", True),
            ("latency_cycles", "latency [cc]", False),
        ):
            curves = {}
            for r in reuses:
                xs = [p["width"] for p in points if p["reuse"] == r]
                ys = [max(p[metric], 1e-3) if logy else p[metric] for p in points if p["reuse"] == r]
                curves[f"R={r}"] = (xs, ys)
            path = out_dir / f"sweep_{metric}.svg"
            path.write_text(svg.line_chart(f"{label} vs bit width", "bit width", label,
                                           curves, log_y=logy))
            written.append(path)
        curves = {}
        for w in (widths[-1],):
            xs = [p["reuse"] for p in points if p["width"] == w]
            ys = [p["latency_cycles"] for p in points if p["width"] == w]
            curves[f"width={w}"] = (xs, ys)
        path = out_dir / "sweep_latency_vs_reuse.svg"
        path.write_text(svg.line_chart("latency vs reuse factor", "reuse factor R",
                                       "latency [cc]", curves))
        written.append(path)
    return written
