"""Exception hierarchy shared by every magskin module."""


class MagskinError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


# magnetics
class SingularEvaluation(MagskinError):
    pass


# skins
class UnknownPreset(MagskinError):
    pass


class InvalidConfig(MagskinError):
    pass


class DegenerateSkin(MagskinError):
    pass


# mechanics
class InvalidParams(MagskinError):
    pass


# characterize
class EmptyInput(MagskinError):
    pass


class InsufficientInstances(MagskinError):
    pass


class SelfAligningSkin(MagskinError):
    """Misalignment is undefined for skins that mechanically self-align."""


# inverse
class InitOutOfBounds(MagskinError):
    pass


class NotConverged(MagskinError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# slip
class TooShort(MagskinError):
    pass


class Diverged(MagskinError):
    pass


# daq
class FrameError(MagskinError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class BadCrc(FrameError):
    pass


class Truncated(FrameError):
    pass


class CorruptLog(MagskinError):
    pass


# flat files
class BadFile(MagskinError):
    pass


# moldgen
class GeometryError(MagskinError):
    pass


class OpenContour(GeometryError):
    pass


class SelfIntersecting(GeometryError):
    pass


class TooFewVertices(GeometryError):
    pass


class UnsupportedEntity(GeometryError):
    pass


class OffsetCollapse(GeometryError):
    pass


class TriangulationFailure(GeometryError):
    pass
