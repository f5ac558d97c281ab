"""Exception types shared across the package.

Each carries the CLI exit code it maps to.
"""


class MrfilError(Exception):
    exit_code = 3


class ConfigError(MrfilError, ValueError):
    """Invalid configuration, shapes or arguments."""

    exit_code = 1


class NumericalError(MrfilError, ArithmeticError):
    """NaN/Inf encountered where finite values are required."""

    exit_code = 3


class MissingArtifactError(MrfilError, FileNotFoundError):
    """An upstream pipeline stage has not been run yet."""

    exit_code = 1

    def __init__(self, stage: str, path):
        self.stage = stage
        self.path = path
        super().__init__(f"missing {path}; run the `{stage}` stage first")
