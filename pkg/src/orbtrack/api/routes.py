import json
import logging
import os
import re
import uuid

import numpy as np
from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException

from orbtrack import __version__
from orbtrack.core.exceptions import ConfigurationError
from orbtrack.dependencies.container import AppContainer
from orbtrack.models.schemas import (
    BatchRequest,
    BatchSummary,
    DepletionReport,
    DepletionRequest,
    ErrorResponse,
    RunAccepted,
    ScenarioConfig,
)
from orbtrack.services.scenarios import PRESETS, preset_names, with_overrides


router = APIRouter()
logger = logging.getLogger(__name__)

RUN_ID_PATTERN = re.compile(r"^[0-9a-f]{32}$")


def get_container() -> AppContainer:
    # Import inside dependency to avoid circular app imports.
    from orbtrack.app import get_container_from_app

    return get_container_from_app()


def _resolve(name: str, inline: ScenarioConfig | None) -> ScenarioConfig:
    if inline is not None:
        return inline
    if name not in PRESETS:
        raise HTTPException(status_code=404, detail=f"Unknown preset '{name}'.")
    return ScenarioConfig.model_validate(PRESETS[name])


def execute_batch(config: ScenarioConfig, output_dir: str, container: AppContainer) -> None:
    try:
        container.runner.run_batch(config, output_dir)
    except Exception as exc:
        logger.error(f"Background batch in {output_dir} failed: {exc}")


@router.get("/", summary="Root endpoint")
async def root() -> dict[str, str]:
    return {"message": "orbtrack API", "version": __version__}


@router.get("/presets", summary="List built-in scenario presets")
async def list_presets() -> dict[str, list[str]]:
    return {"presets": preset_names()}


@router.post(
    "/depletion",
    response_model=DepletionReport,
    responses={400: {"model": ErrorResponse}, 404: {"model": ErrorResponse}},
    summary="Compute the depletion bound and its Monte Carlo check",
)
def depletion(
    request: DepletionRequest, container: AppContainer = Depends(get_container)
) -> DepletionReport:
    config = _resolve(request.scenario, request.config)
    study = config.depletion_study
    try:
        return container.runner.depletion_report(
            config,
            sigma_vel=request.sigma_vel or config.initial_sigmas[3],
            threshold=request.threshold or study.thresholds[0],
            rng=np.random.default_rng(config.master_seed if request.seed is None else request.seed),
            samples=request.samples or container.settings.DEPLETION_SAMPLES,
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except Exception as exc:
        raise HTTPException(status_code=500, detail=f"Depletion analysis failed: {exc}") from exc


@router.post(
    "/runs",
    response_model=RunAccepted,
    responses={400: {"model": ErrorResponse}, 404: {"model": ErrorResponse}},
    summary="Schedule a Monte Carlo batch",
)
async def schedule_batch(
    request: BatchRequest,
    background_tasks: BackgroundTasks,
    container: AppContainer = Depends(get_container),
) -> RunAccepted:
    base = _resolve(request.scenario, request.config)
    try:
        config = with_overrides(
            base, runs=request.runs, master_seed=request.seed, duration=request.duration
        )
    except ConfigurationError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc

    run_id = uuid.uuid4().hex
    output_dir = os.path.join(container.settings.OUTPUT_DIR, run_id)
    background_tasks.add_task(execute_batch, config, output_dir, container)
    return RunAccepted(
        run_id=run_id,
        output_dir=output_dir,
        message=f"Batch of {config.runs} runs scheduled. Poll /runs/{run_id} for the summary.",
    )


@router.get(
    "/runs/{run_id}",
    response_model=BatchSummary,
    responses={404: {"model": ErrorResponse}},
    summary="Fetch a batch summary",
)
async def get_batch(run_id: str, container: AppContainer = Depends(get_container)) -> BatchSummary:
    if not RUN_ID_PATTERN.match(run_id):
        raise HTTPException(status_code=404, detail=f"Unknown run id '{run_id}'.")
    path = os.path.join(container.settings.OUTPUT_DIR, run_id, "summary.json")
    if not os.path.exists(path):
        raise HTTPException(status_code=404, detail=f"Run '{run_id}' has no summary yet.")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return BatchSummary.model_validate(json.load(handle))
    except (OSError, ValueError) as exc:
        raise HTTPException(status_code=500, detail=f"Could not read summary: {exc}") from exc
