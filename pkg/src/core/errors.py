"""
Exception hierarchy for the pipeline.

Every error carries the process exit code the CLI returns for it.
"""


class OAProgError(Exception):
    exit_code = 1


class ValidationFailure(OAProgError):
    """Input or intermediate data violates a contract (exit code 2)."""

    exit_code = 2


class ParseError(ValidationFailure):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class IntegrityError(ValidationFailure):
    pass


class LabelingError(ValidationFailure):
    pass


class GeometryError(ValidationFailure):
    pass


class ImageSizeError(ValidationFailure):
    pass


class TargetRangeError(ValidationFailure):
    pass


class SplitError(ValidationFailure):
    pass


class ModelLoadError(ValidationFailure):
    pass


class DuplicateFoldError(ValidationFailure):
    pass


class FoldCountError(ValidationFailure):
    pass


class TrainingDivergedError(ValidationFailure):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")


class UnsupportedArchitectureError(ValidationFailure):
    pass


class UndefinedMetricError(ValidationFailure):
    pass


class DegenerateVarianceError(ValidationFailure):
    pass


class SchemaError(ValidationFailure):
    pass


class CoverageError(ValidationFailure):
    pass


class InsufficientDataError(ValidationFailure):
    pass


class EmptySubgroupError(ValidationFailure):
    pass


class ProtectedDataError(ValidationFailure):
    """Refusing to replace a data directory the generator did not write."""


class DependencyError(OAProgError):
    """A prerequisite stage has not produced its artifacts (exit code 3)."""

    exit_code = 3

    def __init__(self, stage: str, missing: str):
        self.stage = stage
        self.missing = missing
        super().__init__(f"stage '{stage}' requires '{missing}' to run first")


class StalenessError(OAProgError):
    exit_code = 3

    def __init__(self, stage: str, artifact: str):
        self.stage = stage
        self.artifact = artifact
        super().__init__(
            f"stage '{stage}': artifact '{artifact}' no longer matches the manifest hash"
        )