"""Exception hierarchy shared by every ortholoc module."""


class OrthoLocError(Exception):
    """Base class for all errors raised by ortholoc."""


# geometry
class BehindCamera(OrthoLocError):
    pass


class NonPositiveDepth(OrthoLocError):
    pass


class OutOfBounds(OrthoLocError):
    pass


class NoData(OrthoLocError):
    pass


class EmptyCorrespondences(OrthoLocError):
    pass


# raster / sample I/O
class BadMagic(OrthoLocError):
    pass


class TruncatedFile(OrthoLocError):
    pass


class UnsupportedChannelCount(OrthoLocError):
    pass


class MissingComponent(OrthoLocError):
    def __init__(self, component: str):
        super().__init__(component)
        self.component = component


class InconsistentDims(OrthoLocError):
    pass


class DegenerateOutput(OrthoLocError):
    pass


class Unachievable(OrthoLocError):
    pass


# matching
class NoFeatures(OrthoLocError):
    pass


class InsufficientValidPoints(OrthoLocError):
    pass


class MatchFailure(OrthoLocError):
    pass


# estimation
class DegenerateConfiguration(OrthoLocError):
    pass


class NoConsensus(OrthoLocError):
    pass


class SingularNormalEquations(OrthoLocError):
    pass


class Diverged(OrthoLocError):
    pass


class DegenerateSample(OrthoLocError):
    pass


class SingularHomography(OrthoLocError):
    pass


class HomographyDegenerate(OrthoLocError):
    pass


# synthesis
class CameraInsideGeometry(OrthoLocError):
    pass


class FootprintOutsideScene(OrthoLocError):
    pass


# benchmarking
class MissingGroundTruth(OrthoLocError):
    pass


class EmptyDataset(OrthoLocError):
    pass
