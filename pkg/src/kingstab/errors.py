"""Exception hierarchy for kingstab."""


class KingstabError(Exception):
    """Base class for all errors raised by this package."""


class DepthNeverVanishes(KingstabError):
    """The depth did not reach zero before ``r_max_hint``."""


class NonMonotonePotential(KingstabError):
    pass


class BracketFailure(KingstabError):
    pass


class NoOrbit(KingstabError):
    """Requested (E, L) does not admit a bound non-circular orbit."""


class QuadratureNonConvergence(KingstabError):
    pass


class DomainError(KingstabError):
    """A Casimir function violates Phi(0, L) = 0."""


class GridCoverageError(KingstabError):
    pass


class FlowBlowup(KingstabError):
    """A generator trajectory left the configured phase-space box."""


class SupportViolation(KingstabError):
    pass


class ParityViolation(KingstabError):
    pass


class OrthogonalityViolation(KingstabError):
    """Full-orbit integral of g is not zero, so g is not a bracket {f0, h}."""


class RejectionStarvation(KingstabError):
    pass


class StepBlowup(KingstabError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(KingstabError):
    pass
