"""Exception hierarchy; the CLI maps these onto exit codes."""


class HoplabError(Exception):
    """Base class."""


class ConfigError(HoplabError, ValueError):
    """Invalid parameters or unsupported configuration (exit code 1)."""


class NumericalError(HoplabError, ArithmeticError):
    """A numerical accuracy or consistency check failed (exit code 2)."""


class NotInRegime(NumericalError):
    """A perturbative root could not be certified unique (an exceptional sample)."""
