"""Bytecode parsing, control flow and function boundaries."""
