"""Exception types shared across the toolkit.

The CLI maps these onto stable exit codes: parse/format problems exit 2,
validation/domain problems exit 3.
"""


class MonovoteError(Exception):
    """Base class for all toolkit errors."""


class ParseError(MonovoteError):
    """Malformed text input (calibration, labels, detections, config)."""


class FormatError(MonovoteError):
    """Malformed binary input (depth image, point cloud, distance map)."""


class ValidationError(MonovoteError):
    """Structurally valid input with semantically invalid values."""


class DomainError(MonovoteError):
    """Numeric arguments outside a function's mathematical domain."""


class GenerationError(MonovoteError):
    """Synthetic scene generation failed (e.g. placement impossible)."""
