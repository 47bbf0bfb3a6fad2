"""Fake date tests for lookahead and context bias in LLM macroeconomic forecasts."""

__version__ = "0.1.0"
