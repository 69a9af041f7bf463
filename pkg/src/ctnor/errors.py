"""Exceptions and warnings raised by the ctnor package."""


class CtnorError(Exception):
    """Base class for all package errors."""


class NoExplanation(CtnorError):
    """An output event has zero total intensity under the model.

    Usually means the leak weight is zero or the candidate horizon is too
    short for the delay family.
    """

    def __init__(self, output_indices):
        self.output_indices = list(output_indices)
        head = ", ".join(str(i) for i in self.output_indices[:5])
        more = "" if len(self.output_indices) <= 5 else ", ..."
        super().__init__(
            f"{len(self.output_indices)} output event(s) have zero intensity "
            f"(indices {head}{more}); enable the leak or widen the horizon"
        )


class EmptySegment(CtnorError):
    """A changepoint interval or its complement holds no events of the channel."""


class BinTooCoarse(CtnorError):
    """Bin width too large for the binned noisy-or evaluation."""


class TraceParseError(CtnorError):
    """Malformed trace, model or config file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class DegenerateDelayWarning(UserWarning):
    """Delay spread collapsed; the standard deviation was clamped to its floor."""
