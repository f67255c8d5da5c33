class ErrorCodes:
    UNSPECIFIED = 0
    INVALID_CONFIG = 10
    MISSING_COLUMN = 15
    ROW_VALIDATION = 20
    REFERENTIAL = 25
    DRAWS = 30
    DOMAIN = 35
    COVARIANCE = 40
    LAYOUT = 45
    ESTIMATION = 50
    QUADRATURE = 55


class LcIclvError(Exception):
    """Base of every error raised by the package."""

    error_code:int = ErrorCodes.UNSPECIFIED

    def __init__(self, message: str, error_code:int=None) -> None:
        super().__init__(message)
        self.message = message
        if error_code is not None:
            self.error_code = error_code

    def __str__(self) -> str:
        return f"[E{self.error_code}] {self.message}"


class ConfigError(LcIclvError):
    error_code = ErrorCodes.INVALID_CONFIG


class SchemaError(LcIclvError):
    """A required column is missing from an input table."""
    error_code = ErrorCodes.MISSING_COLUMN

    def __init__(self, column:str, table:str) -> None:
        super().__init__(f"Column '{column}' is missing from the {table} table")
        self.column = column
        self.table = table


class RowValidationError(LcIclvError):
    error_code = ErrorCodes.ROW_VALIDATION

    def __init__(self, message:str, violations:list=None) -> None:
        super().__init__(message)
        self.violations = violations or []


class ReferentialError(LcIclvError):
    error_code = ErrorCodes.REFERENTIAL


class DrawError(LcIclvError):
    error_code = ErrorCodes.DRAWS


class DomainError(LcIclvError, ValueError):
    error_code = ErrorCodes.DOMAIN


class CovarianceError(LcIclvError, ValueError):
    error_code = ErrorCodes.COVARIANCE


class LayoutError(LcIclvError, ValueError):
    error_code = ErrorCodes.LAYOUT


class EstimationError(LcIclvError):
    error_code = ErrorCodes.ESTIMATION


class QuadratureError(LcIclvError):
    error_code = ErrorCodes.QUADRATURE
