"""badlite: a desk-scale active data engine.

Active datasets stamp records with hidden node-local timestamps at
visibility time; parameterized data channels evaluate over them
periodically, continuous channels with exactly-once semantics across
unsynchronized nodes; brokers deliver each subscriber's customized results.
"""

from .engine import Engine, EngineConfig
from .errors import EngineError, ErrorKind

__version__ = "0.1.0"

__all__ = ["Engine", "EngineConfig", "EngineError", "ErrorKind", "__version__"]
