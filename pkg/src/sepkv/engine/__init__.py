from .db import DB, describe_levels, open_db

__all__ = ["DB", "describe_levels", "open_db"]
