"""Exception types. CLI exit codes hang off these."""


class DemBoostError(Exception):
    exit_code = 1


class GridParseError(DemBoostError, ValueError):
    pass


class DomainError(DemBoostError, ValueError):
    pass


class AlignmentError(DomainError):
    """Grids that must share a frame do not."""

    exit_code = 5


class EmptyDatasetError(DemBoostError, ValueError):
    exit_code = 3


class TableParseError(DemBoostError, ValueError):
    pass


class TrainingError(DemBoostError, ValueError):
    pass


class ModelFormatError(DemBoostError, ValueError):
    pass


class FeatureMismatchError(DemBoostError, ValueError):
    exit_code = 4


class TuningError(DemBoostError, RuntimeError):
    pass


class MissingInputError(DemBoostError, FileNotFoundError):
    exit_code = 2
