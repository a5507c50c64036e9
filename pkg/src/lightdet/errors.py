"""Exception hierarchy shared by every lightdet module."""


class LightdetError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class ShapeError(LightdetError, ValueError):
    pass


class ArgumentError(LightdetError, ValueError):
    pass


class DomainError(LightdetError, ValueError):
    pass


class NumericalError(LightdetError, ArithmeticError):
    """A kernel produced NaN/Inf from finite inputs."""


class FormatError(LightdetError, ValueError):
    """Malformed FDMT container, graph JSON or JSON-lines box file."""


class GraphError(LightdetError, ValueError):
    def __init__(self, message, node_id=None):
        super().__init__(message if node_id is None else f"node {node_id!r}: {message}")
        self.node_id = node_id


class MissingWeightError(LightdetError, KeyError):
    def __init__(self, path):
        super().__init__(path)
        self.path = path

    def __str__(self):
        return f"missing weight {self.path!r}"


class GradCheckError(LightdetError, RuntimeError):
    pass


class MetricError(LightdetError, ValueError):
    pass
