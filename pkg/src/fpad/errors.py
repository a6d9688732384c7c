"""Exception hierarchy shared by the pipeline stages."""


class FpadError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpaceError(FpadError, ValueError):
    pass


class InsufficientDataError(FpadError, ValueError):
    pass


class DegenerateConfigurationError(FpadError, ValueError):
    pass


class MissingMetadataError(FpadError, ValueError):
    pass


class UnsupportedOperationError(FpadError, ValueError):
    pass


class OutOfBoundsError(FpadError, IndexError):
    pass


class DimensionMismatchError(FpadError, ValueError):
    pass


class DescriptorMismatchError(FpadError, ValueError):
    pass


class DegenerateLabelsError(FpadError, ValueError):
    pass


class InvalidDataError(FpadError, ValueError):
    pass


class ProtocolInfeasibleError(FpadError, ValueError):
    pass


class MissingStreamError(FpadError, ValueError):
    pass


class ManifestError(FpadError, ValueError):
    """Manifest parse or validation failure.

    ``problems`` holds one human readable message per offending line.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
