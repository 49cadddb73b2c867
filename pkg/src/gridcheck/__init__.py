"""Explicit-state CTMC model checking for sensor-network models of a power transmission line."""
from .numerics import SolverError, SolverOptions
from .parser import ModelIR, ParseError, parse_model
from .properties import Property, PropertyError, evaluate, parse_property, parse_property_file
from .statespace import BuildError, StateSpace, build

__version__ = "0.1.0"

__all__ = [
    "BuildError", "ModelIR", "ParseError", "Property", "PropertyError", "SolverError",
    "SolverOptions", "StateSpace", "build", "evaluate", "parse_model", "parse_property",
    "parse_property_file",
]
