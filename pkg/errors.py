"""
Domain errors. Every failure the pipeline reports on purpose derives from SylvanError;
the CLI maps those to exit code 1.
"""
from typing import Optional


class SylvanError(Exception):
    """Base class for all land-cover pipeline errors."""


class InvalidInput(SylvanError, ValueError):
    """A precondition on an argument does not hold."""


class ConfigError(SylvanError, ValueError):
    """Run configuration is malformed or references missing paths."""


# ----- File formats -----
class BadMagic(SylvanError, ValueError):
    """File does not start with the expected magic bytes."""


class HeaderMismatch(SylvanError, ValueError):
    """Header fields disagree with the payload that follows."""


class UnsupportedDtype(SylvanError, ValueError):
    pass


# ----- Dataset -----
class EmptyResult(SylvanError):
    """Curation produced no samples (thresholds are probably mis-set)."""


class OverlapConflict(SylvanError):
    """Every covered tile matched polygons of more than one class."""


class InsufficientSamples(SylvanError, ValueError):
    pass


class DegenerateStats(SylvanError, ValueError):
    """A band standard deviation is zero."""


# ----- Network -----
class ShapeMismatch(SylvanError, ValueError):
    pass


class EvalBeforeStats(SylvanError):
    """Batch norm used in eval mode before running statistics were ever updated."""


class NonFiniteError(SylvanError, FloatingPointError):
    """NaN or Inf produced by a numeric operation."""


class NonFiniteLogits(NonFiniteError):
    pass


class DivergedLoss(NonFiniteError):
    def __init__(self, message: str, batch_index: Optional[int] = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.batch_index = batch_index
        self.epoch = epoch


class ArchMismatch(SylvanError):
    """Checkpoint blobs do not match the architecture descriptor."""


class EmptySampleSet(SylvanError, ValueError):
    pass


# ----- Inference / analysis -----
class ResolutionMismatch(SylvanError):
    """Raster resolution differs from the checkpoint's training resolution."""


class GridMismatch(SylvanError):
    """Class maps are not co-registered (different dims or geo)."""
