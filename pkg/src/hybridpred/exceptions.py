"""Exception hierarchy shared by every module.

Each exception carries a ``category`` string so the command line can
report a single machine-parsable error token.
"""


class PredictorError(Exception):
    category = "PREDICTOR_ERROR"


class OutOfCorridor(PredictorError, ValueError):
    category = "OUT_OF_CORRIDOR"


class OffPathEnd(PredictorError, ValueError):
    category = "OFF_PATH_END"


class NoIntersection(PredictorError, ValueError):
    category = "NO_INTERSECTION"


class EmptySequence(PredictorError, ValueError):
    category = "EMPTY_SEQUENCE"


class ShapeMismatch(PredictorError, ValueError):
    category = "SHAPE_MISMATCH"


class LengthMismatch(PredictorError, ValueError):
    category = "LENGTH_MISMATCH"


class DatasetTooSmall(PredictorError, ValueError):
    category = "DATASET_TOO_SMALL"


class NonFiniteCost(PredictorError, ArithmeticError):
    category = "NON_FINITE_COST"


class SingularHessian(PredictorError, ArithmeticError):
    category = "SINGULAR_HESSIAN"


class Diverged(PredictorError, ArithmeticError):
    category = "DIVERGED"


class NoSatisfiedSamples(PredictorError):
    category = "NO_SATISFIED_SAMPLES"


class InsufficientHistory(PredictorError, ValueError):
    category = "INSUFFICIENT_HISTORY"


class InfeasibleSpec(PredictorError, ValueError):
    category = "INFEASIBLE_SPEC"


class SchemaError(PredictorError, ValueError):
    category = "SCHEMA_ERROR"

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ModelNotFound(PredictorError, FileNotFoundError):
    category = "MODEL_NOT_FOUND"


class ConfigError(PredictorError, ValueError):
    category = "CONFIG_ERROR"


class DataNotFound(PredictorError, FileNotFoundError):
    category = "DATA_NOT_FOUND"
