"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: DataError -> 1,
ConfigError -> 2 (argparse's own usage failures also exit 2).
"""


class DpmsError(Exception):
    """Base class for all errors raised by this package."""


class DataError(DpmsError):
    """Data violates a contract: bounds, shapes, parse failures."""


class ConfigError(DpmsError):
    """A configuration value is invalid or inconsistent."""


class DegenerateFitError(DpmsError):
    """A fit produced a non-positive squared-error loss, so the profile
    score n*log(loss/n) is undefined.  Callers substitute the documented
    floor instead."""
