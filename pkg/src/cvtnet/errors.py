"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for config/schema problems, 3 for numeric failures, 4 for violated
preconditions.
"""


class CvtError(Exception):
    exit_code = 1


class ConfigError(CvtError):
    exit_code = 2


class PathError(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class SpecError(ConfigError):
    pass


class StructureError(ConfigError):
    pass


class NumericError(CvtError):
    exit_code = 3


class NumericInputError(NumericError):
    pass


class UndefinedModularityError(NumericError):
    pass


class DegenerateAverageError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class PreconditionError(CvtError):
    exit_code = 4


class EmptyInputError(PreconditionError):
    pass


class ParameterError(PreconditionError):
    pass


class SizeError(PreconditionError):
    pass


class ShapeError(PreconditionError):
    pass
