"""Exception types raised by the library.

Every contract violation gets a named class so callers (and the HTTP
layer) can map failures to stable error codes without string matching.
"""


class SegcriticError(Exception):
    """Base class for all library errors."""

    code = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class BadMagic(SegcriticError):
    code = "BadMagic"


class TruncatedPayload(SegcriticError):
    code = "TruncatedPayload"


class LabelOutOfRange(SegcriticError):
    code = "LabelOutOfRange"


class WrongColorType(SegcriticError):
    code = "WrongColorType"


class TooFewSites(SegcriticError):
    code = "TooFewSites"


class SeedOutOfBounds(SegcriticError):
    code = "SeedOutOfBounds"


class EmptySelection(SegcriticError):
    code = "EmptySelection"


class ClassOutOfRange(SegcriticError):
    code = "ClassOutOfRange"


class DimensionMismatch(SegcriticError):
    code = "DimensionMismatch"


class FewerThanTwoMasks(SegcriticError):
    code = "FewerThanTwoMasks"


class EmptyRegion(SegcriticError):
    code = "EmptyRegion"


class RegionTooThin(SegcriticError):
    code = "RegionTooThin"


class LeakageViolation(SegcriticError):
    code = "LeakageViolation"

    def __init__(self, image_hash: str, message: str = ""):
        self.image_hash = image_hash
        super().__init__(message or f"image hash {image_hash} is not in the train split")


class NotHumanProvenance(SegcriticError):
    code = "NotHumanProvenance"


class EmptyValidSet(SegcriticError):
    code = "EmptyValidSet"


class NoSupervision(SegcriticError):
    code = "NoSupervision"


class EmptyLog(SegcriticError):
    code = "EmptyLog"


class EmptyMatrix(SegcriticError):
    code = "EmptyMatrix"


class NoViolatingPixels(SegcriticError):
    code = "NoViolatingPixels"


class BadStore(SegcriticError):
    code = "BadStore"


class AlreadyDecided(SegcriticError):
    code = "AlreadyDecided"
