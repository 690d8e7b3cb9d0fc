"""Client library for the capeval engine.

Training loops use :class:`TraceWriter` to append schema-valid probability
traces while teacher-forcing reference captions, :func:`from_softmax_rows`
to reduce full vocabulary rows to (probability, argmax) pairs, and
:func:`run_engine` to invoke the engine CLI and collect its CSV outputs.
"""

from .engine import EngineError, EngineResult, read_csv, run_engine
from .writer import TraceWriter, from_softmax_rows

__all__ = [
    "EngineError",
    "EngineResult",
    "TraceWriter",
    "from_softmax_rows",
    "read_csv",
    "run_engine",
]

__version__ = "0.1.0"
