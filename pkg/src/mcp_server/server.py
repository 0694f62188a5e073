#!/usr/bin/env python3
"""
EEG Video ASR MCP Server.

Exposes the recognizer's scoring, decoding and reporting operations as Model
Context Protocol tools, the default experiment configuration as a resource,
and an experiment-analysis prompt.

The server supports multiple transports:
- stdio: For desktop and local MCP clients
- streamable-http: For web-based clients
- sse: For browser-based clients
"""

import argparse
import json
import logging
import os
import sys
from typing import Any

from mcp.server.fastmcp import FastMCP

# Add the parent directory to the path to enable imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
from shared import config, service
from shared.config import CONDITIONS, ExperimentConfig
from shared.evaluation import ORDERING, SUMMARY_FILE

logger = logging.getLogger(__name__)

# Initialize MCP server
mcp = FastMCP(
    "EEG Video ASR",
    instructions="Scoring, CTC decoding and report access for an EEG/audio/video speech recognizer",
)


# =============================================================================
# TOOLS - Functions that LLMs can call
# =============================================================================


@mcp.tool()
def compute_wer(ref: str, hyp: str) -> dict[str, Any]:
    """
    Word and character error rate of a recognized transcript.

    Args:
        ref: Reference transcript (e.g., "the cat sat")
        hyp: Recognized transcript (e.g., "the sat")

    Returns:
        WER and CER in percent plus the reference word count
    """
    return service.compute_wer(ref, hyp)


@mcp.tool()
def decode_probabilities(
    probs: list[list[float]],
    method: str = "beam",
    beam_width: int = 16,
    lm_alpha: float = 0.5,
    len_beta: float = 0.6,
    lm_path: str | None = None,
    corpus: list[str] | None = None,
) -> dict[str, Any]:
    """
    Decode per-frame class probabilities into text.

    Args:
        probs: T rows of 29 probabilities (blank, space, apostrophe, a-z)
        method: "beam" (prefix beam search) or "greedy" (best path)
        beam_width: Number of prefixes kept per frame
        lm_alpha: Weight of the character language model
        len_beta: Bonus per emitted character
        lm_path: Optional JSON character LM, relative to the output directory
        corpus: Optional sentences to train a character LM on for this call

    Returns:
        The decoded text and whether an LM was used
    """
    return service.decode_probabilities(probs, method, beam_width, lm_alpha, len_beta, lm_path, corpus)


@mcp.tool()
def score_next_char(
    next_symbol: str, history: str = "", lm_path: str | None = None, corpus: list[str] | None = None
) -> dict[str, Any]:
    """
    Probability of the next character under the character n-gram LM.

    Args:
        next_symbol: One character from the alphabet (e.g., "e")
        history: Text decoded so far (e.g., "th")
        lm_path: Optional JSON character LM, relative to the output directory (default: EEG_ASR_LM_PATH)
        corpus: Optional sentences to train a character LM on for this call

    Returns:
        Probability and log probability of the character
    """
    return service.score_next_char(next_symbol, history, lm_path, corpus)


@mcp.tool()
def kpca_explained_variance(bundle_dir: str | None = None) -> dict[str, Any]:
    """
    Cumulative explained variance of a fitted kernel PCA.

    Args:
        bundle_dir: KPCA bundle directory, relative to the output directory (default: kpca)

    Returns:
        Component count and the cumulative variance ratio per component
    """
    return service.kpca_explained_variance(bundle_dir)


@mcp.tool()
def read_report(name: str) -> dict[str, Any]:
    """
    Read a JSON report from the output directory.

    Args:
        name: Report path relative to the output directory
              (e.g., "video_eeg_mfcc/report_test.json" or "experiment_summary.json")

    Returns:
        The report contents
    """
    return service.read_report(name)


# =============================================================================
# RESOURCES - Data that LLMs can read
# =============================================================================


@mcp.resource("asr://config/defaults")
def get_default_config() -> str:
    """Default experiment configuration as JSON."""
    return json.dumps(ExperimentConfig().to_dict(), indent=2)


# =============================================================================
# PROMPTS - Templates for LLM interactions
# =============================================================================


@mcp.prompt()
def analyze_experiment(summary_name: str = SUMMARY_FILE) -> str:
    """Generate a prompt to analyze a multi-condition experiment."""
    return f"""
    Please analyze the speech recognition experiment summarized in {summary_name}:

    1. Use read_report("{summary_name}") to load the mean test WER per condition
    2. Compare the conditions {", ".join(CONDITIONS)}
    3. Check whether the ordering {" <= ".join(ORDERING)} holds
    4. For the best and worst condition, read <condition>/report_test.json
       (with "+" replaced by "_") and list the utterances with the highest WER
    5. Summarize which input modalities helped and by how much
    """


def main():
    """Run the MCP server with the appropriate transport."""
    parser = argparse.ArgumentParser(description="EEG Video ASR MCP Server")
    parser.add_argument(
        "--transport",
        choices=["stdio", "streamable-http", "sse"],
        default="stdio",
        help="Transport protocol to use (default: stdio)",
    )
    parser.add_argument(
        "--host",
        default="127.0.0.1",
        help="Bind address for HTTP transports (default: %(default)s)",
    )
    parser.add_argument(
        "--port",
        type=int,
        default=config.PORT,
        help="Port for HTTP transports (default: %(default)s)",
    )

    args = parser.parse_args()
    logging.basicConfig(
        level=config.LOG_LEVEL.upper(),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=[logging.StreamHandler()],
    )

    # Run server with selected transport
    if args.transport == "stdio":
        logger.info("MCP server starting in stdio mode")
        mcp.run(transport="stdio")
    else:
        mcp.settings.host = args.host
        mcp.settings.port = args.port
        logger.info(f"MCP server starting with {args.transport} transport on port {args.port}")
        mcp.run(transport=args.transport)


if __name__ == "__main__":
    main()
