"""Service handlers: plain functions over the request/response models.

The CLI calls these in-process; the HTTP app adds nothing but transport.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

import streamcnn
from streamcnn import svg as svgmod
from streamcnn.compress import load_precision_config, profile, prune_magnitude, ptq
from streamcnn.fixedpoint import FxFormat
from streamcnn.estimator import (
    DeviceCapacity,
    EnergyTable,
    emit_report,
    emit_sweep,
    estimate,
    sweep,
)
from streamcnn.model import (
    ModelError,
    load_image,
    load_manifest,
    load_model,
    load_raw_f32,
    make_synthetic_weights,
    preprocess,
    save_model,
)
from streamcnn.reference import run_direct
from streamcnn.service import schemas
from streamcnn.streaming.engine import run_stream
from streamcnn.streaming.instructions import build_instruction_array
from streamcnn.verify import run_equivalence_trials


def _load(manifest: str, weights: str | None):
    try:
        if weights is None:
            g, _ = load_manifest(manifest)
            return make_synthetic_weights(g, seed=0)
        return load_model(manifest, weights)
    except FileNotFoundError as e:
        raise ModelError(f"missing file: {e.filename}") from e


def _require(path: str | None, what: str) -> str:
    if path and not Path(path).exists():
        raise ModelError(f"missing {what}: {path}")
    return path


def _json_dump(path: Path, payload) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return str(path)


def handle_run(req: schemas.RunRequest) -> schemas.RunResponse:
    _require(req.weights, "weights file")
    _require(req.image, "input image")
    g = _load(req.manifest, req.weights)
    if req.precision:
        g = ptq(g, load_precision_config(_require(req.precision, "precision config")))

    if req.image is not None:
        raw = load_image(req.image, g.input_shape)
    else:
        rng = np.random.default_rng(req.seed)
        raw = rng.integers(0, 256, size=g.input_shape, dtype=np.uint8)
    mean = load_raw_f32(req.mean, g.input_shape) if req.mean else np.zeros(g.input_shape)
    std = load_raw_f32(req.std, g.input_shape) if req.std else np.ones(g.input_shape)
    x = preprocess(raw, mean, std)

    resp = schemas.RunResponse(probabilities=[], argmax=0, engine=req.engine, mode=req.mode)
    if req.engine == "direct":
        out = run_direct(g, x, mode=req.mode)
    else:
        out, stats = run_stream(g, x, mode=req.mode, scheduler=req.scheduler)
        resp.ii_cycles = stats.ii_cycles
        resp.latency_cycles = stats.latency_cycles
        resp.latency_us = stats.latency_cycles / req.clock_mhz
        resp.layer_stats = [schemas.LayerCycles(**s.as_dict()) for s in stats.layers]
    resp.probabilities = [float(v) for v in out]
    resp.argmax = int(np.argmax(out))

    if req.out_dir:
        payload = resp.model_dump(exclude={"files"})
        resp.files = [_json_dump(Path(req.out_dir) / "prediction.json", payload)]
    return resp


def handle_verify(req: schemas.VerifyRequest) -> schemas.VerifyResponse:
    report = run_equivalence_trials(
        req.trials, seed=req.seed, corrupt_mask_bit=0 if req.inject_fault else None
    )
    return schemas.VerifyResponse(ok=report.ok, **report.as_dict())


def handle_prune(req: schemas.PruneRequest) -> schemas.PruneResponse:
    g = _load(req.manifest, _require(req.weights, "weights file"))
    pruned, report = prune_magnitude(g, req.sparsity, req.scope)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "pruned_model.json"
    weights_path = out / "pruned_weights.bin"
    save_model(pruned, manifest_path, weights_path)
    d = report.as_dict()
    report_path = _json_dump(out / "sparsity_report.json", d)
    csv_path = out / "sparsity_report.csv"
    rows = ["layer,weights,zeros,zero_fraction,multiplications"]
    rows += [
        f'{l["layer"]},{l["weights"]},{l["zeros"]},{l["zero_fraction"]:.6f},{l["multiplications"]}'
        for l in d["layers"]
    ]
    csv_path.write_text("\n".join(rows) + "\n")
    return schemas.PruneResponse(
        target=d["target"],
        scope=d["scope"],
        layers=[schemas.LayerSparsityModel(**l) for l in d["layers"]],
        total_multiplications=d["total_multiplications"],
        files=[str(manifest_path), str(weights_path), report_path, str(csv_path)],
    )


def handle_quantize(req: schemas.QuantizeRequest) -> schemas.QuantizeResponse:
    g = _load(req.manifest, _require(req.weights, "weights file"))
    cfg = load_precision_config(_require(req.precision, "precision config"))
    q = ptq(g, cfg)
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "quantized_model.json"
    weights_path = out / "quantized_weights.bin"
    save_model(q, manifest_path, weights_path)
    return schemas.QuantizeResponse(
        precisions={l.name: str(l.precision) for l in q.layers},
        files=[str(manifest_path), str(weights_path)],
    )


def handle_profile(req: schemas.ProfileRequest) -> schemas.ProfileResponse:
    g = _load(req.manifest, _require(req.weights, "weights file"))
    rng = np.random.default_rng(req.seed)
    probe = rng.normal(0.0, 1.0, size=(req.samples, *g.input_shape))
    prof = profile(g, probe)
    d = prof.as_dict()
    files = []
    if req.out_dir:
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if "json" in req.formats:
            files.append(_json_dump(out / "profile.json", d))
        if "csv" in req.formats:
            rows = ["layer,kind,min,max,p1,p5,p50,p95,p99,format,covered"]
            for s in d["weights"] + d["activations"]:
                p = s["percentiles"]
                rows.append(
                    f'{s["layer"]},{s["kind"]},{s["min"]:.9g},{s["max"]:.9g},'
                    f'{p["1"]:.9g},{p["5"]:.9g},{p["50"]:.9g},{p["95"]:.9g},{p["99"]:.9g},'
                    f'{s["format"]},{s["covered"]}'
                )
            path = out / "profile.csv"
            path.write_text("\n".join(rows) + "\n")
            files.append(str(path))
        if "svg" in req.formats:
            for kind, series in (("weights", d["weights"]), ("activations", d["activations"])):
                rows = []
                for s in series:
                    w, i = s["format"].strip("<>u").split(",")
                    fmt = FxFormat(int(w), int(i))
                    rows.append({
                        "label": s["layer"],
                        "lo": max(s["percentiles"]["1"], 1e-12),
                        "hi": max(abs(s["min"]), abs(s["max"]), 1e-12),
                        "band_lo": fmt.resolution,
                        "band_hi": max(abs(fmt.min_value), fmt.max_value),
                    })
                path = out / f"profile_{kind}.svg"
                path.write_text(svgmod.range_chart(f"{kind} ranges vs precision", rows))
                files.append(str(path))
    return schemas.ProfileResponse(
        weights=[schemas.RangeRow(**s) for s in d["weights"]],
        activations=[schemas.RangeRow(**s) for s in d["activations"]],
        files=files,
    )


def handle_estimate(req: schemas.EstimateRequest) -> schemas.EstimateResponse:
    if req.weights:
        _require(req.weights, "weights file")
    g = _load(req.manifest, req.weights)
    cfg = None
    if req.precision:
        cfg = load_precision_config(_require(req.precision, "precision config"))
        g = ptq(g, cfg)
    table = EnergyTable.load(req.energy_table) if req.energy_table else EnergyTable.default()
    device = DeviceCapacity.load(req.device) if req.device else DeviceCapacity.default()
    report = estimate(g, reuse=req.reuse, clock_mhz=req.clock_mhz, energy_table=table,
                      device=device, precision_config=cfg, energy_mode=req.energy_mode)
    files = []
    if req.out_dir:
        files = [str(p) for p in emit_report(report, req.out_dir, tuple(req.formats))]
    return schemas.EstimateResponse(report=report.as_dict(), files=files)


def handle_sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    g = _load(req.manifest, req.weights)
    points = sweep(g, widths=tuple(req.widths), reuses=tuple(req.reuses),
                   integer_bits=req.integer_bits, clock_mhz=req.clock_mhz)
    files = [str(p) for p in emit_sweep(points, req.out_dir, tuple(req.formats))]
    return schemas.SweepResponse(points=points, files=files)


def handle_instructions(req: schemas.InstructionRequest) -> schemas.InstructionResponse:
    ia = build_instruction_array(req.height, req.width, req.kernel, req.stride,
                                 req.padding, req.compress)
    return schemas.InstructionResponse(**json.loads(ia.to_json()))


def handle_make_weights(req: schemas.MakeWeightsRequest) -> schemas.MakeWeightsResponse:
    g, _ = load_manifest(req.manifest)
    g = make_synthetic_weights(g, seed=req.seed)
    out = Path(req.out_weights)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest_copy = out.with_suffix(".json")
    save_model(g, manifest_copy, out)
    return schemas.MakeWeightsResponse(path=str(out), size_bytes=out.stat().st_size)
