"""Command-line interface and experiment recipes."""

from .config import ExperimentConfig
from .main import build_parser, main
from .recipes import RECIPES, emit_curves

__all__ = ["ExperimentConfig", "build_parser", "main", "RECIPES", "emit_curves"]
