"""
Exceptions raised by the federated sensing simulator.
"""

from typing import Any


class FedSenseError(Exception):
    """Base class for simulator errors."""


class ConfigError(FedSenseError):
    """The experiment description is missing, unreadable or invalid."""


class TopologyError(FedSenseError):
    """The sensor network is disconnected or no connected layout could be drawn."""


class NotConvergedError(FedSenseError):
    """
    The convergence detector did not fire within max_rounds.

    The partial simulation result is kept on the exception so callers can still
    export what was computed.
    """

    def __init__(self, message: str, result: Any):
        super().__init__(message)
        self.result = result
