"""FastAPI application wrapping the service handlers.

Model errors surface as 400s with the layer-naming message intact.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

import streamcnn
from streamcnn.model import ModelError
from streamcnn.service import schemas
from streamcnn.service.handlers import (
    handle_estimate,
    handle_instructions,
    handle_make_weights,
    handle_profile,
    handle_prune,
    handle_quantize,
    handle_run,
    handle_sweep,
    handle_verify,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="streamcnn",
        version=streamcnn.__version__,
        description="Streaming-dataflow CNN inference, compression and FPGA cost estimation",
    )

    def wrap(handler, req):
        try:
            return handler(req)
        except ModelError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        except FileNotFoundError as e:
            raise HTTPException(status_code=400, detail=f"missing file: {e}") from e

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=streamcnn.__version__)

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        return wrap(handle_run, req)

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify(req: schemas.VerifyRequest):
        return wrap(handle_verify, req)

    @app.post("/prune", response_model=schemas.PruneResponse)
    def prune(req: schemas.PruneRequest):
        return wrap(handle_prune, req)

    @app.post("/quantize", response_model=schemas.QuantizeResponse)
    def quantize(req: schemas.QuantizeRequest):
        return wrap(handle_quantize, req)

    @app.post("/profile", response_model=schemas.ProfileResponse)
    def profile_(req: schemas.ProfileRequest):
        return wrap(handle_profile, req)

    @app.post("/estimate", response_model=schemas.EstimateResponse)
    def estimate_(req: schemas.EstimateRequest):
        return wrap(handle_estimate, req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep_(req: schemas.SweepRequest):
        return wrap(handle_sweep, req)

    @app.post("/instructions", response_model=schemas.InstructionResponse)
    def instructions(req: schemas.InstructionRequest):
        return wrap(handle_instructions, req)

    @app.post("/make-weights", response_model=schemas.MakeWeightsResponse)
    def make_weights(req: schemas.MakeWeightsRequest):
        return wrap(handle_make_weights, req)

    return app


app = create_app()
