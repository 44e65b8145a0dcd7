"""Exception types shared across the toolkit.

Every error raised on purpose derives from RoarbenchError so the CLI can
map failure kinds to exit codes without matching on message strings.
"""


class RoarbenchError(Exception):
    """Base class for all deliberate failures."""


class ContractViolation(RoarbenchError):
    """An operation was called with inputs that break its preconditions."""


class NumericFailure(RoarbenchError):
    """A computation produced NaN/Inf or an otherwise unusable value."""

    def __init__(self, op, detail=""):
        self.op = op
        msg = f"non-finite result in op '{op}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UsageError(RoarbenchError):
    """An API or CLI was driven in an unsupported way (e.g. reusing a tape)."""


class ConfigError(RoarbenchError):
    """A configuration document or parameter set is invalid."""


class MeasureUnsupported(ConfigError):
    """The requested importance measure cannot apply to this model."""


class TrainingFailure(RoarbenchError):
    """A training run diverged or produced a non-finite loss."""


class DatasetParseError(RoarbenchError):
    """A dataset file is malformed; carries the 1-based offending line."""

    def __init__(self, path, line_no, detail):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {detail}")


class UndefinedScoreError(RoarbenchError):
    """The faithfulness score is undefined (flat baseline denominator)."""


class UndefinedIntervalError(RoarbenchError):
    """A confidence interval over fewer than two values is undefined."""


class RunFailureThreshold(RoarbenchError):
    """Too many training runs failed; the plan was aborted."""


class EmptyStoreError(RoarbenchError):
    """A report was requested over a run store with no completed runs."""


class ValidationVerdictFailure(RoarbenchError):
    """The synthetic validation experiment missed its tolerance."""
