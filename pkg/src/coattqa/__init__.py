"""Directed-coattention span-extraction QA at toy scale."""

from .config import RunConfig
from .model import QAModel

__version__ = "0.1.0"

__all__ = ["QAModel", "RunConfig", "__version__"]
