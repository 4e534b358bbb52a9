"""Exception types shared across the package."""


class EprsimError(Exception):
    """Base class for all package-specific errors."""


class ParameterDomainError(EprsimError, ValueError):
    """A parameter is outside its documented domain (negative variance,
    mismatched basis, bad binning, ...)."""


class ConfigError(EprsimError, ValueError):
    """A run configuration is missing or invalid.  ``field`` carries the
    dotted path of the offending leaf, e.g. ``state.sigma_plus``."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EventsFormatError(EprsimError, ValueError):
    """Structural problem in an events file (missing preamble, truncated
    data, out-of-order frames).  ``offset`` is the byte offset at which the
    problem was detected, ``line`` the 1-based line number if known."""

    def __init__(self, message, offset=None, line=None, path=None):
        self.offset = offset
        self.line = line
        self.path = path
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        where = " (" + ", ".join(loc) + ")" if loc else ""
        super().__init__(f"{message}{where}")


class EventsRowError(EventsFormatError):
    """A single data row failed to parse; ``line`` is always set."""


class EventsRangeError(EventsFormatError):
    """A row's frame_id falls outside the range declared in the metadata."""


class FlatFitError(EprsimError, ValueError):
    """Histogram has no structure to fit (all counts equal)."""
