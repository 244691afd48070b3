"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`BenchError`
so callers (the CLI in particular) can separate data problems from bugs.
"""


class BenchError(Exception):
    """Base class for all package errors."""


class DataError(BenchError):
    """Input data or configuration is unusable."""


# datamodel
class MismatchedLabels(DataError):
    pass


class SingleClass(DataError):
    pass


class RaggedTrials(DataError):
    pass


class NotSpd(DataError):
    pass


# dataio
class MissingFile(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class MalformedManifest(DataError):
    pass


class IoFailure(BenchError):
    pass


class InvalidSpec(DataError):
    pass


# preprocess
class InvalidBand(DataError):
    pass


class TooShortRecording(DataError):
    pass


class UpsamplingError(DataError):
    pass


class NoTrials(DataError):
    pass


# spatial
class DegenerateTrial(DataError):
    pass


class SingularComposite(BenchError):
    pass


class ZeroVariance(BenchError):
    pass


class NonConvergence(BenchError):
    pass


class TooFewFeatures(DataError):
    pass


# classify
class SingularCovariance(BenchError):
    pass


# evaluate
class TooFewTrials(DataError):
    pass


class SingleClassFold(DataError):
    pass


# metastats / cli
class EmptyInput(DataError):
    pass


class MalformedCsv(DataError):
    pass


class TooFewPipelines(DataError):
    pass
