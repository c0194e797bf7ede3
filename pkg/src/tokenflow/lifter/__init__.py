"""Symbolic lifting of function units into facts."""
