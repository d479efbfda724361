"""Exception hierarchy shared by all modules.

The split mirrors the CLI exit codes: precondition refusals (exit 2),
numerical failures (exit 3) and IO/schema problems (exit 4).
"""


class CfsError(Exception):
    """Base class for all package errors."""


class PreconditionError(CfsError):
    """An operation refused to run because its preconditions fail.

    Raised when the inputs are structurally valid but violate a documented
    contract (rank deficiency, signature violation, admissibility failure).
    """


class NumericalError(CfsError):
    """A computation could not be completed reliably.

    Raised for eigen-solver failures, ambiguous numerical ranks, spectra
    touching a branch cut and similar conditions.  Never used to silently
    clamp a result.
    """


class SchemaError(CfsError):
    """A file failed schema validation.

    The message carries a JSON-pointer path to the offending element.
    """

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer
