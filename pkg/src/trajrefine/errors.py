"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration: bad fps ratio, unknown variant, missing field, ..."""


class ParseError(ValueError):
    """An annotation file row could not be parsed."""


class GranularityError(ValueError):
    """A granularity level does not divide the trajectory horizon."""


class UsageError(RuntimeError):
    """An operation was called in a state that does not support it."""
