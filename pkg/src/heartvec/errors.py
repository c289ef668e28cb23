"""Exception types raised across the package."""


class HeartvecError(Exception):
    """Base class for every error raised by heartvec."""


class FormatError(HeartvecError, ValueError):
    """A file is malformed (bad header, truncated payload, ...)."""


class UnsupportedFormatError(FormatError):
    """A well-formed file uses an encoding we do not read."""


class ParseError(HeartvecError, ValueError):
    pass


class DuplicateRecordError(HeartvecError, ValueError):
    pass


class InvalidSpecError(HeartvecError, ValueError):
    """A split specification cannot produce a valid partition."""


class InvalidInputError(HeartvecError, ValueError):
    pass


class InvalidConfigError(HeartvecError, ValueError):
    pass


class TooShortError(InvalidInputError):
    """Signal shorter than a single analysis frame."""


class DimensionError(HeartvecError, ValueError):
    pass


class IncompatibleModelError(HeartvecError):
    """Model file kind or version does not match what the caller expects."""


class IncompatibleBundleError(HeartvecError):
    """Stages of a saved model bundle disagree on dimensions."""


class NumericalError(HeartvecError, ArithmeticError):
    pass


class TrainingFailure(HeartvecError, RuntimeError):
    pass


class UndefinedMetricError(HeartvecError, ValueError):
    pass


class UnknownRecordError(HeartvecError, KeyError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"unknown record ids: {', '.join(self.missing)}")

    def __str__(self):
        return self.args[0]


class ConvergenceWarning(UserWarning):
    pass
