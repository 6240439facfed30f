"""Exception types shared across the package."""


class DegenerateStepError(ArithmeticError):
    """Raised when a diffusion step would divide by a vanishing coefficient."""


class DegenerateFeatureError(ArithmeticError):
    """Raised when the encoder's pre-normalization feature has ~zero norm."""


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment/attack configuration."""


class CalibrationError(RuntimeError):
    """Raised when no grid value reaches the requested attack success rate."""
