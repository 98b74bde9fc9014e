"""Exception hierarchy shared by the library and the CLI."""


class ReinsGameError(Exception):
    """Base class for all package errors."""


class DomainError(ReinsGameError, ValueError):
    """An argument lies outside the domain of a formula."""


class ConfigError(ReinsGameError, ValueError):
    """Malformed or inconsistent configuration (CLI exit code 1)."""


class ValidationError(ReinsGameError):
    """A game specification failed its parameter checks (CLI exit code 2)."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.failures())
        super().__init__(f"validation failed: {failed}")


class NoEquilibriumError(ReinsGameError):
    """The competition weights make the equilibrium system singular."""


class ConvergenceError(ReinsGameError):
    """An iterative solver failed to converge (CLI exit code 3)."""


class DegeneracyError(ReinsGameError):
    """A denominator or bracket that should be positive is not."""


class StateError(ReinsGameError):
    """An operation needs data that has not been computed yet."""
