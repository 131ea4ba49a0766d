"""Exception hierarchy shared by every stage of the pipeline."""


class WindplaceError(Exception):
    """Base class for all package errors."""


class ParseError(WindplaceError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(WindplaceError):
    pass


class OutOfDomainError(WindplaceError, ValueError):
    pass


class ConfigurationError(WindplaceError, ValueError):
    pass


class TrainingError(WindplaceError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")


class FormatError(WindplaceError):
    pass


class EvaluationError(WindplaceError, ValueError):
    pass


class EncodingError(WindplaceError):
    pass


class BackendError(WindplaceError):
    def __init__(self, message, output=""):
        self.output = output
        super().__init__(message)


class SolutionParseError(ParseError):
    pass
