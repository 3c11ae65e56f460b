class SepKVError(Exception):
    pass


class CorruptionError(SepKVError):
    """On-disk data failed a checksum or structural check."""

    def __init__(self, message, path=None, block=None):
        self.path = path
        self.block = block
        where = []
        if path:
            where.append(str(path))
        if block:
            where.append("block=%s" % block)
        if where:
            message = "%s (%s)" % (message, ", ".join(where))
        super().__init__(message)


class RangeError(SepKVError, ValueError):
    pass


class BuildError(SepKVError):
    pass


class EngineClosedError(SepKVError):
    pass


class SimulatedCrash(SepKVError):
    """Raised by a FaultInjector to emulate a process kill at an I/O point."""
