class ConvACError(Exception):
    # Base error; code is a stable identifier surfaced by the CLI
    code = "CONVAC_ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code

    def to_dict(self):
        return {"code": self.code, "message": self.message}


class InvalidPartitionError(ConvACError):
    code = "INVALID_PARTITION"


class ShapeError(ConvACError):
    code = "SHAPE_MISMATCH"


class ScalarModeError(ConvACError):
    code = "SCALAR_MODE"


class GridSizeError(ConvACError):
    code = "GRID_TOO_LARGE"


class SingularRepresentationError(ConvACError):
    code = "SINGULAR_REPRESENTATION"


class InfeasibleReceptiveField(ConvACError):
    code = "INFEASIBLE_RECEPTIVE_FIELD"


class SpecError(ConvACError):
    code = "INVALID_SPEC"


class ConstructionError(ConvACError):
    code = "CONSTRUCTION_PRECONDITION"


class ArchParseError(ConvACError):
    code = "ARCH_PARSE"


class NumericError(ConvACError):
    code = "NON_FINITE"
