"""Exception hierarchy shared by every stage of the pipeline."""


class PEBiasError(Exception):
    """Base class for all package errors."""


class EmptyInput(PEBiasError):
    pass


class ConfigError(PEBiasError):
    pass


class ParseError(PEBiasError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(PEBiasError):
    pass


class SchemaError(PEBiasError):
    pass


class MissingTopicError(PEBiasError):
    def __init__(self, item):
        self.item = item
        super().__init__(f"item {item!r} has no topic assignment")


class MissingPropensity(PEBiasError):
    pass


class DivergenceError(PEBiasError):
    def __init__(self, epoch, learning_rate):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite training loss at epoch {epoch} (learning rate {learning_rate:g})"
        )


class SingularSystem(PEBiasError):
    pass


class NoRankableUsers(PEBiasError):
    pass


class DegenerateLabels(PEBiasError):
    pass
