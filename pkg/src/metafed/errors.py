"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for all simulator errors."""


class DomainError(SimulationError, ValueError):
    """An input lies outside its declared domain (e.g. a cell outside the grid)."""


class LayoutError(SimulationError, ValueError):
    """Parameter-vector layouts or shapes do not match."""


class ConfigError(SimulationError, ValueError):
    """Invalid configuration. The message names the offending field path."""


class IsolatedDeviceError(SimulationError, ValueError):
    """A device has an empty neighborhood and cannot take part in consensus."""
