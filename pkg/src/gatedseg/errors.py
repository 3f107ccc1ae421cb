"""Exception hierarchy shared across the package."""


class GatedSegError(Exception):
    """Base class for all package errors."""


class ShapeError(GatedSegError):
    """A tensor does not have the expected shape; message names the offending axis."""


class ConfigError(GatedSegError):
    """Invalid or inconsistent configuration."""


class DataError(GatedSegError):
    """Invalid data encountered in the pipeline (non-finite values, bad specs, ...)."""


class IngestionError(DataError):
    """DICOM series or structure set could not be ingested."""


class TrainingError(GatedSegError):
    """Training or inference failed; message carries step diagnostics."""


class ComparisonError(GatedSegError):
    """Two evaluation reports cannot be compared (mismatched slices/classes)."""


class UsageError(GatedSegError):
    """Bad command-line usage or config overrides."""
