"""Exception hierarchy shared across the simulator."""


class RobustAggError(Exception):
    """Base class for all simulator errors."""


class ConfigError(RobustAggError):
    """Scenario configuration is malformed or inconsistent."""


class ProtocolViolation(RobustAggError):
    """A component attempted an operation the protocol forbids."""


class FrameError(RobustAggError):
    """A length-prefixed byte frame could not be parsed."""


class UnlocalizableFailure(RobustAggError):
    """An aggregation failed but neither localization phase marked a node.

    The localization analysis guarantees this cannot happen; reaching it
    means a bug in the protocol engine, so it is raised rather than handled.
    """


class DisconnectedNetwork(RobustAggError):
    """Exclusions left the base station without a usable tree."""
