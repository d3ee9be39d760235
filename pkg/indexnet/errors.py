class IndexNetError(Exception):
    """Base class of every error raised by the package."""
    exit_code = 1


class ConfigError(IndexNetError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    def __init__(self, what, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f'{what}: expected {expected}, got {got}')


class DataError(IndexNetError, ValueError):
    exit_code = 3


class CheckpointError(DataError):
    pass


class NumericError(IndexNetError, FloatingPointError):
    exit_code = 4
