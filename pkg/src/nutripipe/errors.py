"""Exception hierarchy.

ConfigError maps to CLI exit code 2, DataError to 3, StageFailure to 4.
"""


class NutripipeError(Exception):
    pass


class ConfigError(NutripipeError):
    pass


class DataError(NutripipeError):
    pass


# food database
class MissingColumn(DataError):
    pass


# embeddings / vector stores
class DimTooSmall(ConfigError):
    pass


class BadMagic(DataError):
    pass


class DimMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class DuplicateKey(DataError):
    pass


# matcher
class EmptySample(DataError):
    pass


class MissingVector(DataError):
    def __init__(self, keys, message=None):
        self.keys = list(keys)
        super().__init__(message or f"no vector for {len(self.keys)} key(s): {self.keys[:5]}")


# corpus
class NotEnoughNonResonant(DataError):
    pass


# statistics
class DegenerateTable(DataError):
    pass


class ZeroVariance(DataError):
    pass


# model
class SingleClassInput(DataError):
    pass


class FeatureMaskMismatch(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class ResampleExhaustion(DataError):
    pass


# explain
class TooManyFeatures(ConfigError):
    pass


class EmptyBackground(DataError):
    pass


class HeterogeneousMask(DataError):
    pass


# pipeline
class StageFailure(NutripipeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class IncompleteRun(DataError):
    pass
