"""
1-bit CI Precoding Service - Main Application.

This FastAPI application provides:
1. GET /health - Health check with the active numerical settings
2. POST /precode - One precoding call for a given channel and symbol vector
3. POST /runs - Queue a Monte Carlo experiment (ber-sweep, node-count,
   convergence, prop1-audit) as a background task
4. GET /runs/{id} - Run status and result rows
5. GET /runs - Recent runs

Run with: uvicorn onebit.main:app --reload
"""

import logging
from contextlib import asynccontextmanager
from typing import List

import numpy as np
from fastapi import BackgroundTasks, Depends, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from sqlalchemy.ext.asyncio import AsyncSession

from onebit import __version__
from onebit.config import get_settings
from onebit.database import dispose_db, get_db, get_db_context, init_db
from onebit.logging_config import configure_logging
from onebit.models import PrecodeRequest, PrecodeResponse, RunRequest, RunResponse
from onebit.services.constellations import parse_modulation
from onebit.services.precoders import UnknownPrecoderError, get_precoder
from onebit.services.run_store import create_run, execute_run, get_rows, get_run, list_runs, to_response
from onebit.services.simulation import snr_to_sigma2

settings = get_settings()
logger = logging.getLogger(__name__)


# =============================================================================
# Application Lifecycle
# =============================================================================

@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Application lifecycle handler.

    Startup: configure logging, create tables, log the numerical settings
    Shutdown: dispose the run-store engine
    """
    configure_logging(settings.log_level)
    await init_db()

    logger.info("=" * 60)
    logger.info("1-bit CI precoding service %s started", __version__)
    logger.info("LP tolerance %.0e, box-LS tolerance %.0e", settings.lp_tolerance, settings.box_ls_tolerance)
    logger.info("F-BB guard 2Nt <= %d, run store %s", settings.fbb_max_dimension, settings.database_url)
    logger.info("=" * 60)

    yield

    logger.info("Shutting down...")
    await dispose_db()


app = FastAPI(
    title="1-Bit CI Precoding API",
    description="""
    Constructive-interference 1-bit precoding for downlink multi-user MIMO.

    **Precode**: ZF, CI 1-bit, OPSU, P-BB and F-BB for PSK and QAM

    **Runs**: BER sweeps, node counts, convergence traces and boundary audits
    executed in the background and stored for later retrieval
    """,
    version=__version__,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# =============================================================================
# Response Models for Documentation
# =============================================================================

class HealthResponse(BaseModel):
    """Health check response."""
    status: str
    version: str
    lp_tolerance: float
    box_ls_tolerance: float
    bb_prune_tolerance: float
    fbb_max_dimension: int
    alt_opt_max_rounds: int


# =============================================================================
# Endpoints
# =============================================================================

@app.get("/", include_in_schema=False)
async def root():
    return {
        "message": "1-Bit CI Precoding API",
        "docs": "/docs",
        "health": "/health",
    }


@app.get("/health", response_model=HealthResponse)
async def health_check():
    return HealthResponse(
        status="healthy",
        version=__version__,
        lp_tolerance=settings.lp_tolerance,
        box_ls_tolerance=settings.box_ls_tolerance,
        bb_prune_tolerance=settings.bb_prune_tolerance,
        fbb_max_dimension=settings.fbb_max_dimension,
        alt_opt_max_rounds=settings.alt_opt_max_rounds,
    )


@app.post("/precode", response_model=PrecodeResponse)
async def precode(request: PrecodeRequest):
    """
    Precode one symbol vector.

    The channel is given as real and imaginary parts (K x Nt); symbols are
    alphabet indices. For QAM the precoding factor uses sigma^2 = 10^(-snr/10).
    """
    try:
        precoder = get_precoder(request.precoder)
        constellation = parse_modulation(request.modulation)
        H = np.asarray(request.channel_real, dtype=np.float64) + 1j * np.asarray(request.channel_imag, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != len(request.symbol_indices):
            raise ValueError(f"channel must be K x Nt with K = {len(request.symbol_indices)} rows")
        indices = np.asarray(request.symbol_indices)
        if np.any(indices < 0) or np.any(indices >= constellation.order):
            raise ValueError(f"symbol indices must lie in 0..{constellation.order - 1}")
        symbols = constellation.points[indices]
        result = precoder(H, symbols, constellation, snr_to_sigma2(request.snr_db), None)
    except UnknownPrecoderError as e:
        raise HTTPException(status_code=400, detail=e.args[0])
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception("precode request failed")
        raise HTTPException(status_code=500, detail=f"Precoding failed: {e}")

    x = np.asarray(result.x)
    return PrecodeResponse(
        x_real=x.real.tolist(),
        x_imag=x.imag.tolist(),
        beta=result.beta,
        objective=result.objective,
        nodes_visited=result.diagnostics.nodes_visited,
        depth_iterations=result.diagnostics.depth_iterations,
        alt_rounds=result.alt_rounds,
    )


@app.post("/runs", response_model=RunResponse, status_code=202)
async def submit_run(
    request: RunRequest,
    background_tasks: BackgroundTasks,
    db: AsyncSession = Depends(get_db),
):
    """
    Queue an experiment.

    **Response**: returns immediately with PENDING status.
    Use `GET /runs/{id}` to check for completion.
    """
    run = await create_run(db, request.kind, request.config)
    await db.commit()
    background_tasks.add_task(execute_run, run.id, get_db_context)
    return to_response(run)


@app.get("/runs/{run_id}", response_model=RunResponse)
async def get_run_status(run_id: int, db: AsyncSession = Depends(get_db)):
    run = await get_run(db, run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"Run not found: {run_id}")
    return to_response(run, await get_rows(db, run_id))


@app.get("/runs", response_model=List[RunResponse])
async def get_history(
    limit: int = Query(50, ge=1, le=500),
    db: AsyncSession = Depends(get_db),
):
    return [to_response(run) for run in await list_runs(db, limit)]


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("onebit.main:app", host="0.0.0.0", port=8000, reload=settings.debug)
