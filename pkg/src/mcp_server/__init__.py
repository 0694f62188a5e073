"""MCP server exposing scoring, decoding and report tools."""
