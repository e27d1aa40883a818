"""Exceptions raised by the detection pipeline.

Every error carries a short machine-readable ``code`` so that the CLI, the skip reports and the
tests can match on it without parsing messages.
"""


class DetectorError(Exception):
    """Base class of every error raised by the package.

    Parameters
    ----------
    message : str
        Human readable description.
    code : str, optional
        Machine readable error code. The default is the class attribute ``code``.
    """

    code = "detector-error"

    def __init__(self, message: str, code: str = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ManifestParseError(DetectorError, ValueError):
    """Malformed manifest or assignment file, names the line and the field."""

    code = "parse-error"

    def __init__(self, message: str, line: int = None, field: str = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class SchemaError(DetectorError, ValueError):
    code = "schema-error"


class ImpairmentError(DetectorError):
    code = "impairment-error"

    def __init__(self, message: str, code: str = None, entry_id: str = None):
        if entry_id is not None:
            message = f"entry '{entry_id}': {message}"
        super().__init__(message, code)
        self.entry_id = entry_id


class SplitError(DetectorError, ValueError):
    code = "split-error"


class ModelConfigError(DetectorError, ValueError):
    code = "model-config-error"


class TrainingError(DetectorError):
    code = "training-error"


class EvaluationError(DetectorError, ValueError):
    code = "evaluation-error"


class ConfigError(DetectorError, ValueError):
    """Invalid or unknown configuration value, names the offending field."""

    code = "config-error"

    def __init__(self, message: str, field: str = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
