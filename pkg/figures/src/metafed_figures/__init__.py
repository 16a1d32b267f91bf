"""Batch figure rendering for the simulator's versioned CSV tables."""

__version__ = "0.1.0"

from .render import render, render_to_file
from .spec import KINDS, FigureSpec, SchemaError, load_spec, read_table

__all__ = ["FigureSpec", "KINDS", "SchemaError", "load_spec", "read_table",
           "render", "render_to_file", "__version__"]
