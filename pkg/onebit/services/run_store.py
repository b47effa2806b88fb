"""
Persistence of simulation runs.

This module provides:
1. create_run: record a PENDING run with its full SimConfig
2. execute_run: run the experiment off the event loop and store its rows
3. get_run / get_rows / list_runs: read back runs and results
4. to_response: map a stored run to the API schema

Experiments are CPU-bound, so execute_run hands them to a worker thread
and only touches the database from the event loop.
"""

import asyncio
import json
import logging
import time
from typing import Any, Callable, Dict, List, Optional

from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from onebit.models import RunKind, RunResponse, RunRow, RunStatus, SimConfig, SimulationRun, utcnow
from onebit.services.simulation import run_experiment

logger = logging.getLogger(__name__)


async def create_run(db: AsyncSession, kind: RunKind, cfg: SimConfig) -> SimulationRun:
    run = SimulationRun(
        kind=RunKind(kind).value,
        status=RunStatus.PENDING.value,
        config_json=cfg.model_dump_json(),
    )
    db.add(run)
    await db.flush()
    logger.info("run %d created (%s)", run.id, run.kind)
    return run


async def execute_run(run_id: int, session_factory: Callable) -> None:
    """
    Execute a stored run and persist its rows.

    Any exception marks the run FAILED with the error message; it is not
    re-raised, since this runs as a background task.
    """
    async with session_factory() as db:
        run = await get_run(db, run_id)
        if run is None:
            logger.error("run %d vanished before execution", run_id)
            return
        run.status = RunStatus.RUNNING.value
        run.updated_at = utcnow()
        kind = RunKind(run.kind)
        cfg = SimConfig.model_validate_json(run.config_json)

    logger.info("run %d running", run_id)
    start = time.perf_counter()
    try:
        records = await asyncio.to_thread(run_experiment, kind, cfg)
    except Exception as e:
        logger.exception("run %d failed", run_id)
        async with session_factory() as db:
            run = await get_run(db, run_id)
            run.status = RunStatus.FAILED.value
            run.message = f"{type(e).__name__}: {e}"
            run.updated_at = utcnow()
        return

    wall_ms = (time.perf_counter() - start) * 1e3
    async with session_factory() as db:
        run = await get_run(db, run_id)
        for i, record in enumerate(records):
            db.add(RunRow(run_id=run_id, row_index=i, payload_json=record.model_dump_json()))
        run.status = RunStatus.COMPLETED.value
        run.row_count = len(records)
        run.wall_ms = wall_ms
        run.updated_at = utcnow()
    logger.info("run %d completed: %d rows in %.0f ms", run_id, len(records), wall_ms)


async def get_run(db: AsyncSession, run_id: int) -> Optional[SimulationRun]:
    result = await db.execute(select(SimulationRun).where(SimulationRun.id == run_id))
    return result.scalar_one_or_none()


async def get_rows(db: AsyncSession, run_id: int) -> List[Dict[str, Any]]:
    result = await db.execute(
        select(RunRow).where(RunRow.run_id == run_id).order_by(RunRow.row_index)
    )
    return [json.loads(row.payload_json) for row in result.scalars()]


async def list_runs(db: AsyncSession, limit: int = 50) -> List[SimulationRun]:
    result = await db.execute(
        select(SimulationRun).order_by(SimulationRun.created_at.desc(), SimulationRun.id.desc()).limit(limit)
    )
    return list(result.scalars())


def to_response(run: SimulationRun, rows: Optional[List[Dict[str, Any]]] = None) -> RunResponse:
    return RunResponse(
        id=run.id,
        kind=RunKind(run.kind),
        status=RunStatus(run.status),
        message=run.message,
        row_count=run.row_count or 0,
        wall_ms=run.wall_ms,
        created_at=run.created_at,
        updated_at=run.updated_at,
        rows=rows,
    )
