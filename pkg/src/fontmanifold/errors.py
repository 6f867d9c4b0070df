"""Domain error hierarchy.

Every error the pipeline can raise deliberately derives from
FontManifoldError so callers (CLI, HTTP service) can map the whole family
to exit code 1 / 4xx responses without catching bare Exception.
"""


class FontManifoldError(Exception):
    """Base class for all domain errors raised by this package."""


# --- ingest ---------------------------------------------------------------

class ParseError(FontManifoldError):
    """Font bytes do not parse as a TrueType/OpenType container."""


class MissingGlyph(FontManifoldError):
    """The font has no cmap entry for the requested codepoint."""


class EmptyGlyph(FontManifoldError):
    """The glyph renders no ink (or an image contains no ink pixels)."""


class DimensionError(FontManifoldError):
    """An image has the wrong dimensions for the operation."""


class IoError(FontManifoldError):
    """A directory or file could not be read/written."""


# --- autodiff -------------------------------------------------------------

class ShapeError(FontManifoldError):
    """Tensor shapes do not agree for the requested operation."""


class GraphError(FontManifoldError):
    """The loss tensor was not produced through the given tape."""


# --- numerics -------------------------------------------------------------

class DomainError(FontManifoldError):
    """Scalar argument outside the mathematical domain of the function."""


# --- vae ------------------------------------------------------------------

class RangeError(FontManifoldError):
    """A slider coordinate (or similar bounded integer) is out of range."""


class EmptyDataset(FontManifoldError):
    """Training requires at least two usable bitmaps."""


class CheckpointError(FontManifoldError):
    """Checkpoint bytes are malformed or carry the wrong magic/version."""


# --- manifold -------------------------------------------------------------

class TooFewPoints(FontManifoldError):
    """t-SNE needs at least 12 input points."""


class CalibrationError(FontManifoldError):
    """Perplexity calibration cannot succeed (e.g. all distances zero)."""


class DegenerateData(FontManifoldError):
    """Zero-variance input where spread is required (bandwidth, t-test)."""


class EmptySelection(FontManifoldError):
    """A label filter removed every sample."""


# --- metrics --------------------------------------------------------------

class EmptyCorpus(FontManifoldError):
    """Matching requires a corpus with at least one ok entry."""


class MissingInterface(FontManifoldError):
    """Comparison analysis needs records from both interfaces."""


# --- study ----------------------------------------------------------------

class UnknownSession(FontManifoldError):
    """No session with the given id exists."""


class UnknownTask(FontManifoldError):
    """No task with the given id exists."""


class AlreadyAnswered(FontManifoldError):
    """The task has already been answered."""


class CorpusTooSmall(FontManifoldError):
    """Fewer generated images than requested task targets."""


class ExhaustedSampling(FontManifoldError):
    """A synthetic label bucket could not be filled within the draw budget."""
