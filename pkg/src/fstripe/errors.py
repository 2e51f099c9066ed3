class ParseError(ValueError):
    """Input file does not match its schema."""


class InvalidDataError(ValueError):
    """Input parsed but is internally inconsistent."""


class NumericError(ArithmeticError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, checkpoint=None, log=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.log = log
