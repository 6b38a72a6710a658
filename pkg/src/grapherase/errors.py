"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GraphEraseError(Exception):
    exit_code = 1


class ValidationError(GraphEraseError, ValueError):
    exit_code = 2


class FormatError(GraphEraseError, ValueError):
    """Malformed file: bad magic, wrong version, truncated payload, bad row."""

    exit_code = 2


class ResolutionError(GraphEraseError, KeyError):
    exit_code = 2

    def __str__(self):
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class IntegrityError(GraphEraseError):
    """Graph file and embedding table do not belong together."""

    exit_code = 3


class ConvergenceError(GraphEraseError, RuntimeError):
    exit_code = 4


class CapacityError(GraphEraseError):
    exit_code = 4
