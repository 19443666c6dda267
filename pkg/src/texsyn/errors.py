"""Exception types shared across the toolkit.

Contract violations on tensor shapes / parameter values raise plain
ValueError with a message naming the violated constraint; the classes here
cover failures the CLI maps to distinct exit codes.
"""


class TexsynError(Exception):
    pass


class ConfigError(TexsynError):
    """Invalid or inconsistent run configuration (exit code 2)."""


class DataError(TexsynError):
    """Corpus / input-data problem (exit code 3)."""


class NumericalError(TexsynError):
    """Numerical failure: non-finite loss, sqrtm breakdown, ... (exit code 4)."""


class IntegrityError(TexsynError):
    """Corrupt or structurally mismatched checkpoint."""
