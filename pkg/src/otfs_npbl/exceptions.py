class ConfigurationError(ValueError):
    """Invalid grid, window, scenario or estimator configuration."""


class EmptyModelError(ValueError):
    """An operation needs at least one path but received none."""
