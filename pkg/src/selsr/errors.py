"""Exception types shared across the toolchain.

Argument validation failures raise plain ``ValueError``; the classes here
cover failures that callers may want to catch separately (bad files, empty
sampling regions, degenerate training data, unsolvable matting constraints).
"""


class SelsrError(Exception):
    """Base class for selsr-specific errors."""


class FormatError(SelsrError):
    """A file is not in one of the supported on-disk formats."""


class SamplingError(SelsrError):
    """A mask region is too small to yield any valid training patch."""


class TrainingError(SelsrError):
    """Dictionary training cannot proceed (e.g. all-zero samples)."""


class ConstraintError(SelsrError):
    """Matting constraints are insufficient (missing fg or bg scribbles)."""
