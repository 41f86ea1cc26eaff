"""Parabolic optimal-transport flow for costs without the MTW condition."""

from .config import RunConfig
from .cost import make_cost
from .errors import ParotError
from .flow import FlowConfig, Problem, assemble_state, run_flow
from .pipeline import run_pipeline

__all__ = ["FlowConfig", "ParotError", "Problem", "RunConfig", "assemble_state", "make_cost", "run_flow", "run_pipeline"]
__version__ = "0.1.0"
