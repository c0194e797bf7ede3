"""Static token-flow analysis of EVM bytecode."""

__version__ = "0.1.0"
