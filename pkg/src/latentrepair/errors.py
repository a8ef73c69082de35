"""Exception hierarchy.

Everything a user can trigger with bad input derives from :class:`DataError`;
the CLI maps those to exit code 2.
"""


class LatentRepairError(Exception):
    pass


class DataError(LatentRepairError, ValueError):
    """Malformed input data, roles, or configuration."""


class InsufficientDataError(DataError):
    """Every conditioning stratum was too sparse for an asymptotic test."""


class PartitionError(DataError):
    pass


class TauBoundError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass
