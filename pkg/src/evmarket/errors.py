"""Exception types raised by the simulator."""


class EvMarketError(Exception):
    """Base class for all simulator errors."""


class DomainError(EvMarketError, ValueError):
    """An argument lies outside the domain of a model formula."""


class ShapeMismatch(EvMarketError, ValueError):
    pass


class NumericalDivergence(EvMarketError, ArithmeticError):
    pass


class StrandedEv(EvMarketError):
    """A driving EV can neither reach a station nor leave the highway."""

    def __init__(self, ev_id, position_km, soc):
        super().__init__(f"EV {ev_id} stranded at {position_km:.2f} km with soc {soc:.4f}")
        self.ev_id = ev_id
        self.position_km = position_km
        self.soc = soc


class NoReachableStation(EvMarketError):
    def __init__(self, ev_id):
        super().__init__(f"EV {ev_id} has no reachable station")
        self.ev_id = ev_id


class NonConvergence(EvMarketError):
    """Raised when an iterative procedure exceeds its budget.

    ``trace`` carries whatever diagnostic history the raiser had (loss trace,
    revision count) and ``result`` the best partial result, if any.
    """

    def __init__(self, message, trace=None, result=None):
        super().__init__(message)
        self.trace = trace
        self.result = result


class ConfigError(EvMarketError, ValueError):
    pass
