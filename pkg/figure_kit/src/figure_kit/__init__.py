"""Figure rendering for thermlab CSV outputs."""

from .render import KINDS, FigureJob, OutputExists, render
from .schemas import SchemaMismatch, Table, load_table

__all__ = [
    "KINDS",
    "FigureJob",
    "OutputExists",
    "render",
    "SchemaMismatch",
    "Table",
    "load_table",
]
