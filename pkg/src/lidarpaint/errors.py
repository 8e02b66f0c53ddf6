"""Error types shared across the package.

ValueError subclasses signal bad inputs (files, fields, arguments) and map to
CLI exit code 1; everything else is a runtime failure and maps to exit 2.
"""


class FormatError(ValueError):
    """A file does not conform to its on-disk format."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class ValidationError(ValueError):
    """A loaded or constructed object violates an invariant."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ScheduleError(ValueError):
    """A diffusion schedule cannot support the requested step."""


class ConfigError(ValueError):
    """An invalid run configuration."""


class TrainingError(RuntimeError):
    """Training diverged or otherwise failed mid-run."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step
