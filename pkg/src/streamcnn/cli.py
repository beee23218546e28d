"""Command-line front end: a thin client over the service layer.

Commands build the service request models and execute the handlers
in-process; pass --server URL to talk to a running instance over HTTP
instead. Exit codes: 0 success, 1 verification failure, 2 usage or input
error.
"""

from __future__ import annotations

import json
import sys

import click

from streamcnn.model import ModelError
from streamcnn.service import handlers, schemas

HANDLERS = {
    "/run": (handlers.handle_run, schemas.RunRequest),
    "/verify": (handlers.handle_verify, schemas.VerifyRequest),
    "/prune": (handlers.handle_prune, schemas.PruneRequest),
    "/quantize": (handlers.handle_quantize, schemas.QuantizeRequest),
    "/profile": (handlers.handle_profile, schemas.ProfileRequest),
    "/estimate": (handlers.handle_estimate, schemas.EstimateRequest),
    "/sweep": (handlers.handle_sweep, schemas.SweepRequest),
    "/instructions": (handlers.handle_instructions, schemas.InstructionRequest),
    "/make-weights": (handlers.handle_make_weights, schemas.MakeWeightsRequest),
}


def call(ctx: click.Context, path: str, request) -> dict:
    """Dispatch a request in-process or against a remote server."""
    server = ctx.obj.get("server")
    if server:
        import httpx

        try:
            r = httpx.post(server.rstrip("/") + path, json=request.model_dump(), timeout=600.0)
        except httpx.HTTPError as e:
            raise click.ClickException(f"server unreachable: {e}")
        if r.status_code == 400:
            click.echo(f"error: {r.json().get('detail')}", err=True)
            sys.exit(2)
        r.raise_for_status()
        return r.json()
    handler, _ = HANDLERS[path]
    try:
        return handler(request).model_dump()
    except ModelError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    except FileNotFoundError as e:
        click.echo(f"error: missing file: {e.filename or e}", err=True)
        sys.exit(2)


def echo_json(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Send commands to a running service instead of in-process.")
@click.pass_context
def main(ctx, server):
    """Streaming-dataflow CNN engine, compression passes and cost estimator."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--model", "-m", required=True, help="Model manifest JSON.")
@click.option("--weights", "-w", required=True, help="Raw float32 weight file.")
@click.option("--input", "-i", "image", default=None, help="Input image (PNG or raw u8 HWC).")
@click.option("--mean", default=None, help="Per-pixel mean, raw float32.")
@click.option("--std", default=None, help="Per-pixel std, raw float32.")
@click.option("--engine", type=click.Choice(["direct", "stream"]), default="stream", show_default=True)
@click.option("--mode", type=click.Choice(["real", "fixed"]), default="fixed", show_default=True)
@click.option("--scheduler", type=click.Choice(["coroutine", "threads"]), default="coroutine")
@click.option("--precision", default=None, help="Precision config JSON to apply before running.")
@click.option("--seed", default=0, show_default=True)
@click.option("--clock-mhz", default=200.0, show_default=True)
@click.option("--out", "out_dir", default=None, help="Directory for prediction.json.")
@click.pass_context
def run(ctx, model, weights, image, mean, std, engine, mode, scheduler, precision,
        seed, clock_mhz, out_dir):
    """Classify one input and report probabilities plus cycle statistics."""
    resp = call(ctx, "/run", schemas.RunRequest(
        manifest=model, weights=weights, image=image, mean=mean, std=std,
        engine=engine, mode=mode, scheduler=scheduler, precision=precision,
        seed=seed, clock_mhz=clock_mhz, out_dir=out_dir,
    ))
    click.echo(f"argmax: {resp['argmax']}")
    click.echo("probabilities: " + " ".join(f"{p:.6f}" for p in resp["probabilities"]))
    if resp.get("layer_stats"):
        click.echo(f"II: {resp['ii_cycles']} cc   latency: {resp['latency_cycles']} cc "
                   f"({resp['latency_us']:.3f} us at {clock_mhz:g} MHz)")
        click.echo(f"{'layer':<12}{'in':>8}{'out':>8}{'cycles':>8}{'fifo peak':>10}")
        for s in resp["layer_stats"]:
            click.echo(f"{s['layer']:<12}{s['items_in']:>8}{s['items_out']:>8}"
                       f"{s['consumption_cycles']:>8}{s['window_fifo_peak']:>10}")
    for f in resp.get("files", []):
        click.echo(f"wrote {f}")


@main.command()
@click.option("--trials", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--inject-fault", is_flag=True, hidden=True,
              help="Flip one instruction-mask bit (negative control).")
@click.pass_context
def verify(ctx, trials, seed, inject_fault):
    """Randomized stream-vs-direct equivalence check; exit 1 on mismatch."""
    if trials < 1:
        raise click.UsageError("--trials must be >= 1")
    resp = call(ctx, "/verify", schemas.VerifyRequest(
        trials=trials, seed=seed, inject_fault=inject_fault))
    click.echo(f"{resp['trials']} trials, {resp['mismatches']} mismatches, "
               f"max deviation {resp['max_abs_deviation']}")
    if not resp["ok"]:
        click.echo(f"first failing seed: {resp['failing_seed']}", err=True)
        sys.exit(1)


@main.command()
@click.option("--model", "-m", required=True)
@click.option("--weights", "-w", required=True)
@click.option("--sparsity", default=0.5, show_default=True)
@click.option("--scope", type=click.Choice(["per-layer", "global"]), default="per-layer",
              show_default=True)
@click.option("--out", "out_dir", required=True, help="Directory for the pruned model.")
@click.pass_context
def prune(ctx, model, weights, sparsity, scope, out_dir):
    """Magnitude-prune the model and write the pruned copy plus a report."""
    resp = call(ctx, "/prune", schemas.PruneRequest(
        manifest=model, weights=weights, sparsity=sparsity, scope=scope, out_dir=out_dir))
    for l in resp["layers"]:
        click.echo(f"{l['layer']:<10} zeros {l['zeros']:>6}/{l['weights']:<6} "
                   f"({100 * l['zero_fraction']:.1f}%)")
    click.echo(f"nonzero multiplications: {resp['total_multiplications']}")
    for f in resp["files"]:
        click.echo(f"wrote {f}")


@main.command()
@click.option("--model", "-m", required=True)
@click.option("--weights", "-w", required=True)
@click.option("--config", "precision", required=True, help="Precision config JSON.")
@click.option("--out", "out_dir", required=True)
@click.pass_context
def quantize(ctx, model, weights, precision, out_dir):
    """Post-training quantize weights per the precision config."""
    resp = call(ctx, "/quantize", schemas.QuantizeRequest(
        manifest=model, weights=weights, precision=precision, out_dir=out_dir))
    for name, fmt in resp["precisions"].items():
        click.echo(f"{name:<10} {fmt}")
    for f in resp["files"]:
        click.echo(f"wrote {f}")


@main.command()
@click.option("--model", "-m", required=True)
@click.option("--weights", "-w", required=True)
@click.option("--samples", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--format", "formats", multiple=True,
              type=click.Choice(["json", "csv", "svg"]), default=("json", "svg"))
@click.option("--out", "out_dir", default=None)
@click.pass_context
def profile(ctx, model, weights, samples, seed, formats, out_dir):
    """Profile weight/activation ranges against the configured precisions."""
    resp = call(ctx, "/profile", schemas.ProfileRequest(
        manifest=model, weights=weights, samples=samples, seed=seed,
        formats=list(formats), out_dir=out_dir))
    for row in resp["weights"] + resp["activations"]:
        flag = "ok" if row["covered"] else "NOT COVERED"
        click.echo(f"{row['layer']:<10} {row['kind']:<12} "
                   f"[{row['min']:+.4f}, {row['max']:+.4f}] {row['format']:<8} {flag}")
    for f in resp["files"]:
        click.echo(f"wrote {f}")


@main.command()
@click.option("--model", "-m", required=True)
@click.option("--weights", "-w", default=None)
@click.option("--precision", default=None, help="Precision config JSON.")
@click.option("--reuse", default=1, show_default=True)
@click.option("--reuse-config", default=None, help="JSON file: layer name -> R.")
@click.option("--clock-mhz", default=200.0, show_default=True)
@click.option("--energy-table", default=None)
@click.option("--device", default=None)
@click.option("--energy-mode", type=click.Choice(["fixed", "float32"]), default="fixed")
@click.option("--format", "formats", multiple=True,
              type=click.Choice(["json", "csv", "svg"]), default=("json",))
@click.option("--out", "out_dir", default=None)
@click.pass_context
def estimate(ctx, model, weights, precision, reuse, reuse_config, clock_mhz,
             energy_table, device, energy_mode, formats, out_dir):
    """Static cost report: weights, FLOPs, bits, energy, latency, resources."""
    r = reuse
    if reuse_config:
        try:
            r = {k: int(v) for k, v in json.loads(open(reuse_config).read()).items()}
        except FileNotFoundError:
            click.echo(f"error: missing file: {reuse_config}", err=True)
            sys.exit(2)
    resp = call(ctx, "/estimate", schemas.EstimateRequest(
        manifest=model, weights=weights, precision=precision, reuse=r,
        clock_mhz=clock_mhz, energy_table=energy_table, device=device,
        energy_mode=energy_mode, formats=list(formats), out_dir=out_dir))
    rep = resp["report"]
    totals = rep["totals"]
    click.echo(f"{'layer':<10}{'weights':>9}{'MFLOPs':>9}{'bits':>9}{'energy nJ':>11}"
               f"{'cycles':>8}{'DSP':>9}")
    for l in rep["layers"]:
        click.echo(f"{l['layer']:<10}{l['weights']:>9}{l['flops'] / 1e6:>9.3f}{l['bits']:>9}"
                   f"{l['energy_nj']:>11.2f}{l['cycles']:>8}{l['dsp']:>9.1f}")
    click.echo(f"{'total':<10}{int(totals['weights']):>9}{totals['flops'] / 1e6:>9.3f}"
               f"{int(totals['bits']):>9}{totals['energy_nj']:>11.2f}"
               f"{rep['latency_cycles']:>8}{totals['dsp']:>9.1f}")
    click.echo(f"II {rep['ii_cycles']} cc, latency {rep['latency_cycles']} cc "
               f"= {rep['latency_us']:.3f} us at {rep['clock_mhz']:g} MHz")
    util = rep.get("utilization_pct", {})
    if util:
        click.echo("utilization: " + "  ".join(f"{k.upper()} {v:.2f}%" for k, v in util.items()))
    for f in resp["files"]:
        click.echo(f"wrote {f}")


def _parse_int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part and not part.startswith("-"):
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


@main.command()
@click.option("--model", "-m", required=True)
@click.option("--weights", "-w", default=None)
@click.option("--widths", default="1-16", show_default=True, help="e.g. 4,8,12-16")
@click.option("--reuse", default="1,2,3,4,6", show_default=True)
@click.option("--integer-bits", default=6, show_default=True)
@click.option("--clock-mhz", default=200.0, show_default=True)
@click.option("--format", "formats", multiple=True,
              type=click.Choice(["csv", "json", "svg"]), default=("csv", "svg"))
@click.option("--out", "out_dir", required=True)
@click.pass_context
def sweep(ctx, model, weights, widths, reuse, integer_bits, clock_mhz, formats, out_dir):
    """Cost sweep over bit widths and reuse factors."""
    try:
        width_list = _parse_int_list(widths)
        reuse_list = _parse_int_list(reuse)
    except ValueError:
        raise click.UsageError("--widths/--reuse must be integer lists like 1,2,4 or 3-16")
    resp = call(ctx, "/sweep", schemas.SweepRequest(
        manifest=model, weights=weights, widths=width_list, reuses=reuse_list,
        integer_bits=integer_bits, clock_mhz=clock_mhz, formats=list(formats),
        out_dir=out_dir))
    click.echo(f"{len(resp['points'])} sweep points")
    for f in resp["files"]:
        click.echo(f"wrote {f}")


@main.command()
@click.option("--height", default=32, show_default=True)
@click.option("--width", default=32, show_default=True)
@click.option("--kernel", default=3, show_default=True)
@click.option("--stride", default=1, show_default=True)
@click.option("--padding", type=click.Choice(["valid", "same"]), default="valid")
@click.option("--compress/--no-compress", default=True, show_default=True)
@click.option("--out", "out_file", default=None, help="Write the array as JSON.")
@click.pass_context
def instructions(ctx, height, width, kernel, stride, padding, compress, out_file):
    """Emit the instruction-mask array for one convolution geometry."""
    resp = call(ctx, "/instructions", schemas.InstructionRequest(
        height=height, width=width, kernel=kernel, stride=stride,
        padding=padding, compress=compress))
    if out_file:
        with open(out_file, "w") as fh:
            json.dump(resp, fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {out_file}")
    else:
        echo_json(resp)


@main.command("make-weights")
@click.option("--model", "-m", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_weights", required=True, help="Output .bin path.")
@click.pass_context
def make_weights(ctx, model, seed, out_weights):
    """Generate reproducible synthetic weights for a manifest (demo/testing)."""
    resp = call(ctx, "/make-weights", schemas.MakeWeightsRequest(
        manifest=model, seed=seed, out_weights=out_weights))
    click.echo(f"wrote {resp['path']} ({resp['size_bytes']} bytes)")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("streamcnn.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
