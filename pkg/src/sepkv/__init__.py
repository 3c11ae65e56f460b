"""Key-value separated LSM storage engine."""
from .engine import DB, open_db
from .errors import CorruptionError, SepKVError
from .options import Options, desk_scale, load_options

__version__ = "0.1.0"

__all__ = ["DB", "CorruptionError", "Options", "SepKVError", "desk_scale", "load_options", "open_db"]
