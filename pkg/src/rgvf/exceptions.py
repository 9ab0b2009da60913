"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or constructor arguments."""


class InfeasibleSamplingError(ConfigError):
    """The random generator cannot draw enough parents without replacement."""

    def __init__(self, layer, requested, available):
        self.layer = layer
        self.requested = requested
        self.available = available
        super().__init__(
            f"layer {layer}: cannot sample {requested} parents without replacement "
            f"from {available} candidates"
        )


class ParseError(ValueError):
    """Malformed serialized question network or checkpoint."""


class ShapeError(ValueError):
    """Array shapes do not match what the operation expects."""


class UnsupportedFeatureError(TypeError):
    """A feature cannot be evaluated from an environment model."""


class NumericError(ArithmeticError):
    """A linear solve or numeric routine failed."""
