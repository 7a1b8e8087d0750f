import typing


class HemosindyError(Exception):
    """Raised when an identification, simulation or classification step
    cannot complete.

    This exception is the base class for all errors raised by hemosindy.
    Each subclass carries the process exit code the command-line interface
    reports for it.

    Examples:
        ```python
        try:
            model = stls.stls_fit(
                theta, eta=5.0
            )
        except HemosindyError as error:
            print(
                f'Fit failed: {error}'
            )
        ```
    """

    exit_code: typing.ClassVar[int] = 1


class InputError(HemosindyError, ValueError):
    """Raised for malformed or inconsistent input data"""

    exit_code = 2


class ParameterError(HemosindyError, ValueError):
    """Raised when an option is outside of its valid range"""

    exit_code = 2


class ModelStructureError(HemosindyError):
    """Raised when a model's active terms do not support the requested
    view, for example extracting oscillator parameters from a model that
    kept a nonlinear term.

    """

    exit_code = 2

    def __init__(self, message: str, active: list[str]) -> None:
        super().__init__(f'{message} (active terms: {", ".join(active)})')
        self.active = active


class CycleDetectionError(HemosindyError):
    """Raised when a record has too few cardiac cycles for a protocol"""

    exit_code = 2

    def __init__(self, required: int, detected: int) -> None:
        super().__init__(
            f'Protocol requires {required} cardiac cycles, '
            f'detected {detected}'
        )
        self.required = required
        self.detected = detected


class DegenerateTrainingError(HemosindyError):
    """Raised when classifier training data cannot identify more than one
    class

    """

    exit_code = 2


class DataFileError(HemosindyError, OSError):
    """Raised when an input file is missing, unreadable or unparsable"""

    exit_code = 3


class SingularMatrixError(HemosindyError, ArithmeticError):
    """Raised when the restricted design matrix is rank deficient.

    Attributes:
        columns: Names of the columns found to be linearly dependent

    """

    exit_code = 4

    def __init__(self, columns: list[str]) -> None:
        super().__init__(
            f'Design matrix is rank deficient, dependent columns: '
            f'{", ".join(columns)}'
        )
        self.columns = columns


class DivergenceError(HemosindyError, ArithmeticError):
    """Raised when a simulated trajectory blows up.

    Attributes:
        time: Simulation time in seconds at which the overflow was detected

    """

    exit_code = 4

    def __init__(self, time: float, value: float) -> None:
        super().__init__(
            f'Simulation diverged at t={time:.6g}s (|p|={abs(value):.3g})'
        )
        self.time = time
