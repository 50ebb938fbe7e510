import numpy as np

USAGE = 1
DATA = 2
NUMERICAL = 3


class SeqAlignError(Exception):
    """seqalign error"""

    exit_code = DATA

    def __init__(self, detail: str = None):
        self.detail = detail

        message = self.__class__.__doc__
        if detail:
            message = f"{message}: {detail}"

        super().__init__(message)


class DimensionClamped(UserWarning):
    """Requested subspace dimension was reduced to fit the data"""


class UsageError(SeqAlignError):
    """Invalid command-line usage"""

    exit_code = USAGE


# numerical failures


class DimensionTooLarge(SeqAlignError):
    """Subspace dimension exceeds min(n - 1, D)"""

    exit_code = NUMERICAL


class DimensionMismatch(SeqAlignError):
    """Column count does not match the fitted dimension"""

    exit_code = NUMERICAL


class DegenerateInput(SeqAlignError):
    """At least two samples are required"""

    exit_code = NUMERICAL


class FrameMismatch(SeqAlignError):
    """Joined spaces have different column counts"""

    exit_code = NUMERICAL


class NumericalFailure(SeqAlignError):
    """Linear algebra routine failed or produced non-finite values"""

    exit_code = NUMERICAL


# data errors


class MalformedHeader(SeqAlignError):
    """Data file header does not match id,step,split,label,e0,...,e{D-1}"""


class MalformedManifest(SeqAlignError):
    """Manifest must define dimension, steps and labels"""


class RaggedRow(SeqAlignError):
    """Data row has the wrong number of fields"""


class UnknownStep(SeqAlignError):
    """Record references a step missing from the manifest"""


class UnknownLabel(SeqAlignError):
    """Record references a label missing from the manifest"""


class DuplicateId(SeqAlignError):
    """Record identifier is not unique"""


class EmptyStep(SeqAlignError):
    """Step has no records"""


class InvalidFractions(SeqAlignError):
    """Split fractions must be non-negative and sum to 1"""


class InvalidConfig(SeqAlignError):
    """Invalid configuration"""


class UnknownSeedId(SeqAlignError):
    """Seed identifier is not a target sample"""


class MissingSeedClass(SeqAlignError):
    """Source class has no seed in the target domain"""


class MissingClass(SeqAlignError):
    """Class has no labeled row in the test step's train split"""


class NoHistory(SeqAlignError):
    """Mode needs at least one step before the test step"""


class EmptyClass(SeqAlignError):
    """Class has no rows"""


class SingleClass(SeqAlignError):
    """At least two classes are required"""


class EmptyInput(SeqAlignError):
    """No rows given"""


class TooFewSamples(SeqAlignError):
    """Fewer samples than clusters"""


class TooFewSteps(SeqAlignError):
    """At least two time-steps are required"""


class LengthMismatch(SeqAlignError):
    """Predictions and truth differ in length"""


def exit_code_for(error: BaseException) -> int:
    """Select the command-line exit code reported for an exception"""
    if isinstance(error, SeqAlignError):
        return error.exit_code

    for Error in (np.linalg.LinAlgError, FloatingPointError, ArithmeticError):
        if isinstance(error, Error):
            return NUMERICAL

    return DATA
