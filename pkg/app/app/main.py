"""
App name: Takens Reservoir Toolkit (takres)
Description: FastAPI application entry point. Launches experiments in the background
             and exposes their progress for polling.
"""

import os
from pathlib import Path

from dotenv import load_dotenv
from fastapi import BackgroundTasks, FastAPI, Request, Response
from fastapi.responses import JSONResponse
from slowapi import Limiter, _rate_limit_exceeded_handler
from slowapi.errors import RateLimitExceeded
from slowapi.util import get_remote_address

from usecase.experiments_usecase import ExperimentsUsecase
from utils.constants import Constants
from utils.logger import logger

code = Constants.ResponseCode

# ----- Paths / env -----
BASE_DIR = Path(__file__).resolve().parent.parent
ENV_PATH = BASE_DIR / ".env"
load_dotenv(ENV_PATH)

MAX_ACTIVE_RUNS = int(os.getenv(Constants.Env.MAX_ACTIVE_RUNS, "2"))

# ----- Rate Limiting -----
limiter = Limiter(key_func=get_remote_address)

app = FastAPI(title="takres", version=Constants.VERSION)
app.state.limiter = limiter
app.add_exception_handler(RateLimitExceeded, _rate_limit_exceeded_handler)


# ============================================
#  Helper Functions
# ============================================
def _build_response(response: dict):
    """
    Convert usecase response dict to appropriate FastAPI response.
    Handles 204 No Content (empty body) vs JSON responses.
    """
    if response["status_code"] == code.CODE_204:
        return Response(status_code=code.CODE_204)
    return JSONResponse(
        content=response["context"],
        status_code=response["status_code"]
    )


# ============================================
#  Health Checks
# ============================================
@app.get("/health")
def health():
    """Health check endpoint."""
    return {"ok": True, "version": Constants.VERSION}


# ============================================
#  Experiments
# ============================================
@app.get("/experiments")
@limiter.limit("60/minute")
def list_experiments(request: Request):
    """Names accepted by POST /experiments."""
    return JSONResponse(content={"experiments": Constants.Experiments.ALL}, status_code=code.CODE_200)


@app.post("/experiments")
@limiter.limit("10/minute")
async def post_experiment(request: Request, background_tasks: BackgroundTasks):
    """
    Start an experiment from a JSON config body (must name "experiment").
    Returns 202 Accepted immediately, the run executes in background.
    Client should poll /experiments/{runID}/progress for status.
    """
    try:
        data = await request.json()
    except ValueError:
        return JSONResponse(content={"message": "Request body must be JSON"}, status_code=code.CODE_400)

    usecase = ExperimentsUsecase()
    response = usecase.start_async(data, MAX_ACTIVE_RUNS)

    if response["status_code"] == code.CODE_202:
        run_id = response["context"]["runID"]
        logger.info(f"Scheduling runID {run_id} ({response['context']['experiment']})")
        background_tasks.add_task(usecase.run_background, run_id, data)

    return _build_response(response)


@app.get("/experiments/{run_id}/progress")
@limiter.limit("120/minute")
def get_experiment_progress(request: Request, run_id: int):
    """
    Get progress of a background run.
    Returns current/total units and status (processing/complete/error).
    """
    progress = ExperimentsUsecase.get_progress(run_id)

    if progress is None:
        return JSONResponse(
            content={"message": f"Progress not found for run ID {run_id}"},
            status_code=code.CODE_404
        )

    return JSONResponse(content=progress, status_code=code.CODE_200)


@app.delete("/experiments/{run_id}/progress")
@limiter.limit("60/minute")
def clear_experiment_progress(request: Request, run_id: int):
    """
    Clear progress tracking for a run (cleanup after complete).
    """
    ExperimentsUsecase.clear_progress(run_id)
    return Response(status_code=code.CODE_204)
