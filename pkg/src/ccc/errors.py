"""Exception families used across the package.

The CLI maps each family to a distinct exit code, so raising the right
class is part of the contract, not just diagnostics.
"""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class ConfigError(ValueError):
    """Invalid configuration: unknown preset, bad flag value, missing field."""


class DataFormatError(ValueError):
    """A dataset file failed validation.

    Carries the offending path and (1-based) line number when known so the
    message pinpoints the bad row.
    """

    def __init__(self, message, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        loc = ""
        if self.path is not None:
            loc = f" [{self.path}" + (f":{line}]" if line is not None else "]")
        super().__init__(message + loc)
