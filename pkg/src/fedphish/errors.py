"""Exception hierarchy shared by every fedphish subsystem."""


class FedPhishError(Exception):
    """Base class; ``stage`` names the pipeline stage when known."""

    stage = None

    def with_stage(self, stage):
        self.stage = stage
        return self

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class DimensionError(FedPhishError, ValueError):
    pass


class ConfigurationError(FedPhishError, ValueError):
    pass


class DataError(FedPhishError, ValueError):
    pass


class UsageError(FedPhishError, RuntimeError):
    pass


class NumericError(FedPhishError, ArithmeticError):
    pass


class ProtocolError(FedPhishError, ValueError):
    """Raised by the aggregator when a node update violates the wire contract."""


class ReportIOError(FedPhishError, OSError):
    """An output file or directory could not be written."""
