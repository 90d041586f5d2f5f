"""Exception and warning classes raised across the toolkit."""


class ToothkitError(Exception):
    pass


class ParseError(ToothkitError):
    """Input file is not well-formed JSON (or not the expected top-level shape)."""


class ValidationError(ToothkitError, ValueError):
    """Input violates a declared invariant; ``offender`` names the first culprit."""

    def __init__(self, message: str, offender: str = ""):
        super().__init__(f"{offender}: {message}" if offender else message)
        self.offender = offender


class DegenerateMaskError(ToothkitError, ValueError):
    """Polygon rasterizes to zero pixels."""


class ToothkitWarning(UserWarning):
    pass


class ClipWarning(ToothkitWarning):
    """Part of a composite or polygon fell outside the canvas and was clipped."""


class AnnotationDroppedWarning(ToothkitWarning):
    """An annotation left the canvas entirely and was removed."""


class MissingClassWarning(ToothkitWarning):
    """A requested tooth class has no entry in the tooth bank."""


class MultiPolygonWarning(ToothkitWarning):
    """Only the first polygon of a multi-polygon segmentation is used."""


class DegenerateToothWarning(ToothkitWarning):
    """An annotation with a degenerate polygon was skipped."""
