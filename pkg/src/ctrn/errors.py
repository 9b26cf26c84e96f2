"""Exception types shared across the package."""


class CtrnError(Exception):
    pass


class ShapeError(CtrnError, ValueError):
    pass


class StateError(CtrnError, RuntimeError):
    """Backward requested without the matching forward record."""


class VocabularyError(CtrnError, IndexError):
    pass


class AlignmentError(CtrnError, IndexError):
    pass


class EmptySequenceError(CtrnError, ValueError):
    pass


class LabelError(CtrnError, ValueError):
    pass


class ParseError(CtrnError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MetricError(CtrnError, ValueError):
    pass


class ConfigError(CtrnError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class CheckpointError(CtrnError, ValueError):
    pass


class NonFiniteGradientError(CtrnError, FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name
