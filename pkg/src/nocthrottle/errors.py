"""Exception hierarchy shared by the simulator, the learning pipeline and the CLI."""


class NocError(Exception):
    """Base class for all package errors."""


class ConfigError(NocError, ValueError):
    """Invalid run configuration, mesh layout or parameter value."""


class RouteError(NocError, ValueError):
    """A route was requested that cannot exist (e.g. source equals destination)."""


class TrainingError(NocError, ValueError):
    """Decision-tree training was given unusable data."""


class ModelLoadError(NocError):
    """A model file is empty, malformed, or written by an unsupported version."""


class LivelockError(NocError, RuntimeError):
    """A packet exceeded the configured deflection limit."""

    def __init__(self, message: str, packet_id: int, cycle: int):
        super().__init__(message)
        self.packet_id = packet_id
        self.cycle = cycle


class ComparisonError(NocError, ValueError):
    """Two metric reports cannot be compared (different workloads)."""
