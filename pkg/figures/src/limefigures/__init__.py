"""Figure rendering for tablime CSV reports."""

from .render import FigureSpec, RenderResult, SchemaError, render

__version__ = "0.1.0"
