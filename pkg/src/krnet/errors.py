"""Exception hierarchy shared by all modules."""


class KRError(Exception):
    """Base class for every error raised by krnet."""


class InputError(KRError):
    """Malformed or inconsistent user input (CLI exit code 2)."""


class NumericalError(KRError):
    """A computation failed a numerical certificate (CLI exit code 3)."""


class InvalidMeasure(InputError):
    pass


class InvalidParameter(InputError):
    pass


class SpaceMismatch(InputError):
    pass


class UnbalancedInput(InputError):
    pass


class OracleSizeExceeded(InputError):
    pass


class DegenerateExtremal(InputError):
    pass


class CertificationError(NumericalError):
    """Transport plan or potentials failed the optimality checks."""


class IllPosednessWarning(UserWarning):
    """Raised (as a warning) for p = 1 problems prone to mass escape."""


class DemoCheckFailed(NumericalError):
    """A demonstration reproduced a value different from the one it asserts."""
