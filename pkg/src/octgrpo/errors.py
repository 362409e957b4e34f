class OctGrpoError(Exception):
    """Base class for domain errors. The CLI maps these to exit code 1."""


class ShapeError(OctGrpoError):
    pass


class DimensionError(OctGrpoError):
    pass


class FormatError(OctGrpoError):
    pass


class CodecError(OctGrpoError):
    pass


class QuantizationError(OctGrpoError):
    pass


class CriticError(OctGrpoError):
    pass


class PolicyError(OctGrpoError):
    pass


class TrainingError(OctGrpoError):
    pass
