"""Exception hierarchy shared by the library and the command line."""


class AdaptDiagError(Exception):
    """Base class; ``exit_code`` is the CLI status for uncaught instances."""

    exit_code = 1


class ConfigError(AdaptDiagError, ValueError):
    """Malformed or invalid run configuration.

    ``field`` names the offending key when one can be identified.
    """

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ScenarioError(AdaptDiagError, ValueError):
    """Unknown scenario, inadmissible parameter, or inconsistent inputs."""

    exit_code = 3


class NotPropagatableError(ScenarioError):
    """Exact marginals were requested for a policy that only supports sampling."""


class BudgetExceededError(AdaptDiagError, RuntimeError):
    """A cap or nested-estimation budget was exhausted."""

    exit_code = 4
