"""Exception hierarchy shared by every fairmask module."""


class FairmaskError(Exception):
    """Base class for all package errors."""


class ConfigError(FairmaskError, ValueError):
    pass


class ParseError(FairmaskError, ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericError(FairmaskError, FloatingPointError):
    """Raised when a forward pass produces a non-finite activation."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} at layer {layer}")
        self.layer = layer


class DivergedError(FairmaskError, FloatingPointError):
    def __init__(self, message, epoch=None, step=None):
        super().__init__(f"{message} (epoch={epoch}, step={step})")
        self.epoch = epoch
        self.step = step


class StaleCacheError(FairmaskError, RuntimeError):
    pass


class CheckpointError(FairmaskError, OSError):
    pass


class UndefinedMetricError(FairmaskError, ValueError):
    def __init__(self, message, group=None):
        super().__init__(message if group is None else f"{message} (group {group})")
        self.group = group


class SearchError(FairmaskError, RuntimeError):
    pass
