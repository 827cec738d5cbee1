"""Exception and warning types shared across rfit.

The CLI maps each family onto an exit code: usage errors exit with 2,
numerical failures with 3 and schema/ingestion failures with 4.
"""


class RfitError(Exception):
    """Base class for all rfit errors."""


class UsageError(RfitError, ValueError):
    """Caller supplied arguments that violate an operation's preconditions."""


class NumericalError(RfitError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class DomainError(NumericalError):
    """A residual was evaluated outside its positive-denominator region."""

    def __init__(self, denominator, message=None):
        self.denominator = float(denominator)
        super().__init__(message or f"nonpositive residual denominator {self.denominator!r}")


class SingularFitError(NumericalError):
    """Least-squares refit hit a degenerate configuration."""


class UnboundedError(NumericalError):
    """Bisection could not bracket the minimax value below its cap."""


class InternalConsistencyError(NumericalError):
    """An identity that must hold exactly (e.g. Parseval) was violated."""


class IngestionError(RfitError, ValueError):
    """Input data is malformed or physically invalid."""


class SchemaError(IngestionError):
    """An instance file does not match the expected schema."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SolverWarning(UserWarning):
    """The feasibility solver ran out of budget; values are upper bounds."""


class BoundaryAmbiguityWarning(UserWarning):
    """A feasibility decision fell within solver tolerance of the threshold."""


class IngestionWarning(UserWarning):
    """Input accepted, but part of it sits near a parametrisation breakdown."""


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_SCHEMA = 4


def exit_code_for(exc):
    """Map an exception onto the CLI exit code convention."""
    if isinstance(exc, IngestionError):
        return EXIT_SCHEMA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_USAGE
