"""Error taxonomy shared by every subsystem.

Each class maps onto one CLI exit code so failure modes stay
distinguishable all the way out to scripts driving the tool.
"""


class MiniManoError(Exception):
    """Base class; `exit_code` is what the CLI returns for this family."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class TemplateError(MiniManoError):
    """Template syntax, validation, or parameter binding failure."""

    exit_code = 2


class TemplateSyntaxError(TemplateError):
    """Source text outside the supported document subset."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{loc}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class DependencyCycleError(TemplateError):
    """Resource dependency graph is not a DAG; `cycle` names one cycle."""

    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("dependency cycle: " + " -> ".join(cycle + cycle[:1]))


class ConflictError(MiniManoError):
    """Duplicate names, invalid lifecycle state, already-attached, etc."""

    exit_code = 2


class AuthError(MiniManoError):
    """Authentication or authorization failure."""

    exit_code = 3


class DeployError(MiniManoError):
    """A resource or stack failed to deploy."""

    exit_code = 4


class CapacityError(DeployError):
    """No host has room for the requested flavor."""


class StateIOError(MiniManoError):
    """State file or template file could not be read or written."""

    exit_code = 5


class NotFoundError(MiniManoError):
    """Unknown identifier, or an object outside the caller's tenant."""

    exit_code = 6
