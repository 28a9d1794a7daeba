"""
Error Hierarchy
Every failure raised by the pipeline, grouped by the exit code the CLI maps it to
"""


class AgriGnnError(Exception):
    """Base class for all pipeline errors"""
    exit_code = 1


# ======================================================
# === Input / schema errors (exit 2) ===
# ======================================================
class InputError(AgriGnnError):
    """Bad input data or a violated precondition on it"""
    exit_code = 2


class SchemaError(InputError):
    """A required CSV column is missing"""

    def __init__(self, column: str):
        super().__init__(f"Missing required column: '{column}'")
        self.column = column


class RowParseError(InputError):
    """A cell could not be parsed as a number"""

    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"Row {row}: cannot parse column '{column}' value {value!r} as a number")
        self.row = row
        self.column = column
        self.value = value


class DomainError(InputError):
    """A scalar argument is outside its valid domain"""


class UnknownColumnError(InputError):
    """A named column does not exist in the dataset"""


class UnimputableError(InputError):
    """A numeric column has no observed value to impute from"""

    def __init__(self, column: str):
        super().__init__(f"Column '{column}' has no observed values; cannot impute")
        self.column = column


class ExtrapolationError(InputError):
    """Requested wavelength lies outside the sampled range"""


class UnknownIndexError(InputError):
    """Vegetation index name not in the catalog"""


class GraphError(InputError):
    """Graph cannot be built from the given coordinates or edges"""


class ShapeError(InputError):
    """Matrix shapes are incompatible for the requested operation"""


# ======================================================
# === Numeric failures (exit 3) ===
# ======================================================
class NumericError(AgriGnnError):
    """A numerical procedure failed or produced non-finite values"""
    exit_code = 3


class NonFiniteLossError(NumericError):
    """Training loss became NaN or infinite"""

    def __init__(self, epoch: int, value: float):
        super().__init__(f"Non-finite loss {value} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class PerplexityError(NumericError):
    """t-SNE perplexity cannot be reached for some point"""


class MetricError(NumericError):
    """Metric is undefined for the given inputs"""


class GradientCheckError(NumericError):
    """Function evaluation during a finite-difference check was not finite"""


# ======================================================
# === Configuration errors (exit 4) ===
# ======================================================
class ConfigError(AgriGnnError):
    """Invalid, unknown or inconsistent configuration"""
    exit_code = 4
