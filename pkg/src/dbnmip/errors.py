class DbnError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(DbnError):
    pass


class DataError(DbnError):
    pass


class GenerationError(DbnError):
    pass


class ExplosiveProcessError(GenerationError):
    def __init__(self, radius: float):
        super().__init__(f"process is explosive: companion spectral radius {radius:.6g} >= 1")
        self.radius = radius
