"""Fixture helpers: assembler, contract builder, concrete interpreter, RPC server."""
