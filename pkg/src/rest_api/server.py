#!/usr/bin/env python3
"""
REST API for the EEG/video speech recognizer.

Serves the stateless pieces of the pipeline over HTTP: error-rate scoring,
CTC decoding of probability matrices, character LM queries, and read-only
access to experiment reports in the output directory.
"""

import logging
import os
import sys
from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

# Add the parent directory to the path to enable imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
from shared import config
from shared.errors import ConfigError, DataError, ParameterError, PipelineError, StateError
from shared.service import compute_wer, decode_probabilities, read_report, score_next_char

# Configure logging
logging.basicConfig(
    level=config.LOG_LEVEL.upper(),
    format="%(asctime)s [%(levelname)s] %(message)s",
    handlers=[logging.StreamHandler()],
)
logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(
    title="EEG Video ASR REST API",
    description="Scoring, decoding and report access for the EEG/video speech recognizer",
    version="0.1.0",
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class WerRequest(BaseModel):
    ref: str
    hyp: str


class DecodeRequest(BaseModel):
    probs: list[list[float]] = Field(description="T x 29 per-frame class probabilities, blank first")
    method: str = "beam"
    beam_width: int = 16
    lm_alpha: float = 0.5
    len_beta: float = 0.6
    lm_path: str | None = None
    corpus: list[str] | None = None


class LmScoreRequest(BaseModel):
    next_symbol: str
    history: str = ""
    lm_path: str | None = None
    corpus: list[str] | None = None


def _status(e: Exception) -> int:
    if isinstance(e, (ParameterError, DataError)):
        return 422
    if isinstance(e, (ConfigError, StateError)):
        return 409
    return 500


def _fail(action: str, e: Exception) -> HTTPException:
    status = _status(e)
    if status == 500:
        logger.error(f"Error {action}: {str(e)}")
    detail = f"{e.kind}: {e}" if isinstance(e, PipelineError) else str(e)
    return HTTPException(status_code=status, detail=detail)


# =============================================================================
# Health Check Endpoints
# =============================================================================


@app.get("/", summary="Root endpoint", tags=["Health"])
async def root() -> dict[str, str]:
    """Root endpoint. Returns server running status."""
    return {"message": "EEG Video ASR REST API Server is running"}


@app.get("/healthz", summary="Health check", tags=["Health"])
async def health_check() -> dict[str, str]:
    """Health check endpoint. Returns OK if server is healthy."""
    return {"status": "healthy"}


# =============================================================================
# Recognition Endpoints
# =============================================================================


@app.post("/wer", tags=["Recognition"])
async def wer_endpoint(request: WerRequest) -> dict[str, Any]:
    """Word and character error rate of a hypothesis against its reference"""
    try:
        return compute_wer(request.ref, request.hyp)
    except Exception as e:
        raise _fail("computing WER", e)


@app.post("/decode", tags=["Recognition"])
async def decode(request: DecodeRequest) -> dict[str, Any]:
    """Decode a probability matrix with greedy or LM-fused prefix beam search"""
    try:
        return decode_probabilities(
            request.probs,
            request.method,
            request.beam_width,
            request.lm_alpha,
            request.len_beta,
            request.lm_path,
            request.corpus,
        )
    except Exception as e:
        raise _fail("decoding", e)


@app.post("/lm/score", tags=["Recognition"])
async def lm_score(request: LmScoreRequest) -> dict[str, Any]:
    """Probability of the next character under the character n-gram LM"""
    try:
        return score_next_char(request.next_symbol, request.history, request.lm_path, request.corpus)
    except Exception as e:
        raise _fail("scoring character", e)


# =============================================================================
# Report Endpoints
# =============================================================================


@app.get("/reports/{name:path}", tags=["Reports"])
async def report(name: str) -> dict[str, Any]:
    """Get a JSON report (WER report or experiment summary) from the output directory"""
    try:
        return read_report(name)
    except Exception as e:
        raise _fail("reading report", e)


if __name__ == "__main__":
    import uvicorn

    # Run without reload to avoid module path issues
    # For development with reload, use: PYTHONPATH=src uvicorn rest_api.server:app --reload
    uvicorn.run(app, host="0.0.0.0", port=config.PORT, reload=False)
