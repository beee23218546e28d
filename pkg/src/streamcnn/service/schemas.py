"""Request/response models for the inference and estimation service.

File arguments are paths visible to the service process; the CLI runs the
handlers in-process by default, so they resolve on the local filesystem.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class LayerCycles(BaseModel):
    layer: str
    items_in: int
    items_out: int
    consumption_cycles: int
    window_fifo_peak: int


class RunRequest(BaseModel):
    manifest: str
    weights: str
    image: Optional[str] = None
    mean: Optional[str] = None
    std: Optional[str] = None
    engine: Literal["direct", "stream"] = "stream"
    mode: Literal["real", "fixed"] = "fixed"
    scheduler: Literal["coroutine", "threads"] = "coroutine"
    precision: Optional[str] = None
    seed: int = 0
    clock_mhz: float = 200.0
    out_dir: Optional[str] = None


class RunResponse(BaseModel):
    probabilities: list[float]
    argmax: int
    engine: str
    mode: str
    ii_cycles: Optional[int] = None
    latency_cycles: Optional[int] = None
    latency_us: Optional[float] = None
    layer_stats: Optional[list[LayerCycles]] = None
    files: list[str] = Field(default_factory=list)


class VerifyRequest(BaseModel):
    trials: int = Field(ge=1)
    seed: int = 0
    inject_fault: bool = False


class VerifyResponse(BaseModel):
    trials: int
    mismatches: int
    max_abs_deviation: float
    failing_seed: Optional[int] = None
    ok: bool


class PruneRequest(BaseModel):
    manifest: str
    weights: str
    sparsity: float = Field(ge=0.0, lt=1.0)
    scope: Literal["per-layer", "global"] = "per-layer"
    out_dir: str


class LayerSparsityModel(BaseModel):
    layer: str
    weights: int
    zeros: int
    zero_fraction: float
    multiplications: int


class PruneResponse(BaseModel):
    target: float
    scope: str
    layers: list[LayerSparsityModel]
    total_multiplications: int
    files: list[str]


class QuantizeRequest(BaseModel):
    manifest: str
    weights: str
    precision: str
    out_dir: str


class QuantizeResponse(BaseModel):
    precisions: dict[str, str]
    files: list[str]


class ProfileRequest(BaseModel):
    manifest: str
    weights: str
    samples: int = Field(default=8, ge=1)
    seed: int = 0
    out_dir: Optional[str] = None
    formats: list[Literal["json", "csv", "svg"]] = Field(default_factory=lambda: ["json"])


class RangeRow(BaseModel):
    layer: str
    kind: str
    min: float
    max: float
    percentiles: dict[str, float]
    format: str
    covered: bool


class ProfileResponse(BaseModel):
    weights: list[RangeRow]
    activations: list[RangeRow]
    files: list[str]


class EstimateRequest(BaseModel):
    manifest: str
    weights: Optional[str] = None
    precision: Optional[str] = None
    reuse: Union[int, dict[str, int]] = 1
    clock_mhz: float = 200.0
    energy_table: Optional[str] = None
    device: Optional[str] = None
    energy_mode: Literal["fixed", "float32"] = "fixed"
    out_dir: Optional[str] = None
    formats: list[Literal["json", "csv", "svg"]] = Field(default_factory=lambda: ["json"])


class EstimateResponse(BaseModel):
    report: dict
    files: list[str]


class SweepRequest(BaseModel):
    manifest: str
    weights: Optional[str] = None
    widths: list[int] = Field(default_factory=lambda: list(range(1, 17)))
    reuses: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 6])
    integer_bits: int = 6
    clock_mhz: float = 200.0
    out_dir: str
    formats: list[Literal["csv", "json", "svg"]] = Field(default_factory=lambda: ["csv", "svg"])


class SweepResponse(BaseModel):
    points: list[dict]
    files: list[str]


class InstructionRequest(BaseModel):
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    kernel: int = Field(ge=1)
    stride: int = Field(default=1, ge=1)
    padding: Literal["valid", "same"] = "valid"
    compress: bool = True


class InstructionResponse(BaseModel):
    kernel: int
    stride: int
    padding: str
    grid: list[int]
    pad: list[int]
    out: list[int]
    compressed: bool
    fallback_warning: bool
    masks: list[list[int]]
    row_translate: list[int]
    col_translate: list[int]


class MakeWeightsRequest(BaseModel):
    manifest: str
    seed: int = 0
    out_weights: str


class MakeWeightsResponse(BaseModel):
    path: str
    size_bytes: int
