class GrkError(Exception):
    """Base class for every error raised by grk."""


class InputError(GrkError, ValueError):
    """An argument violates an operation's precondition."""


class GenerationError(GrkError, RuntimeError):
    """Rejection sampling could not satisfy the requested constraint."""
