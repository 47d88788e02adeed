"""Exception hierarchy shared by every stage.

Each base class carries the CLI exit code its subclasses map to.
"""


class RefSpeechError(Exception):
    exit_code = 1


class ValidationError(RefSpeechError):
    """Malformed input: bad columns, bad arguments, schema violations."""

    exit_code = 2


class DataError(RefSpeechError):
    """Input is well-formed but unusable (too few samples, no voicing, ...)."""

    exit_code = 3


class NumericError(RefSpeechError):
    """A computation failed numerically (singular matrices, diverged loss)."""

    exit_code = 4
