class ConfigurationError(ValueError):
    """Raised when array sizes, grids or parameter vectors do not agree."""


class RankDeficientPilotsError(ValueError):
    """Raised when an LS pilot matrix does not have full row rank."""
