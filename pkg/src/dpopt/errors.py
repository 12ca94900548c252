"""Exception types shared across the toolkit."""


class InvalidArgumentError(ValueError):
    """A caller violated an operation's precondition."""


class ParseError(ValueError):
    """A config file, CSV file, or run log could not be parsed.

    The message always names the offending key or line.
    """


class BudgetExhaustedError(RuntimeError):
    """The privacy budget does not admit even a single training step."""


class NumericAbortError(RuntimeError):
    """Training hit a non-finite loss or parameter value.

    Carries the records logged up to (and including) the diagnostic record
    for the aborting step.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records if records is not None else []
