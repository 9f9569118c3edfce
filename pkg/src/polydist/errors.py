"""Exception hierarchy shared by all polydist modules."""


class PolydistError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PolydistError):
    """A textual input could not be parsed.

    Carries a best-effort (line, column) position when known.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class ValidationError(PolydistError):
    """A structurally well-formed input violates a documented invariant."""


class SpaceMismatch(PolydistError):
    """Two operands live in incompatible spaces."""


class UnboundedSet(PolydistError):
    """A set with an unbounded dimension was constructed."""


class EmptySet(PolydistError):
    """Lexicographic extremum requested on an empty set."""


class IterationCapExceeded(PolydistError):
    """A fixpoint loop failed to converge within its iteration budget."""


class AnalysisError(PolydistError):
    """Base class for failures of the analysis pipeline."""


class UncoveredRead(AnalysisError):
    """A read instance has no producing write; the scop is missing its prologue."""


class IndivisibleExtent(ValidationError):
    """A field extent is not divisible by the grid extent along some dimension."""


class UnsatisfiablePlacement(AnalysisError):
    """Co-location constraints left some statement instance without a node."""


class ScatterCollision(AnalysisError):
    """An inserted communication event collided with an existing scatter tuple."""


class EvaluationError(PolydistError):
    """Type error or bad reference while evaluating a statement body."""


class GeometryMismatch(PolydistError):
    """A plan was initialized on a grid it was not compiled for."""


class DeadlockDetected(PolydistError):
    """All simulated nodes are blocked and no message can be delivered."""


class BufferStateViolation(PolydistError):
    """A communication buffer was used in an illegal state."""


class IndexOutOfBounds(PolydistError):
    """A field element index lies outside the field's index set."""


class NotLocal(PolydistError):
    """A local-rank query for an element not homed on the queried node."""


class OutOfHull(PolydistError):
    """A buffer-rank query for an element outside the buffer's hull box."""
