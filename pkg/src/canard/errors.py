"""Exception hierarchy shared by all modules."""


class CanardError(Exception):
    """Base class for every error raised by this package."""


class ZeroCoefficient(CanardError, ValueError):
    def __init__(self, field: str):
        super().__init__(f"coefficient {field} must be finite and nonzero")
        self.field = field


class BadWindow(CanardError, ValueError):
    pass


class DegenerateClassification(CanardError):
    """Input sits on a case boundary; perturb it and retry."""


class NotApplicable(CanardError):
    pass


class NoCrossing(CanardError):
    pass


class NoExitBeforeT(CanardError):
    pass


class OutOfDomain(CanardError, ValueError):
    pass


class InvalidEpsilon(CanardError, ValueError):
    pass


class AdmissibilityViolated(CanardError, ValueError):
    pass


class NoRootBeforeT(CanardError):
    pass


class ConfigError(CanardError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError, ValueError):
    def __init__(self, field: str, message: str = ""):
        super().__init__(f"{field}: {message}" if message else field)
        self.field = field
