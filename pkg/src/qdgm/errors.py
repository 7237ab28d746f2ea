"""Exception types shared across the package.

The CLI maps these onto process exit codes: config problems exit 64,
verification failures exit 1, gradient-bound (growing-range) violations
exit 2.
"""


class GraphSamplingError(RuntimeError):
    """Raised when no connected graph is found within the retry budget."""


class MixingError(ValueError):
    """Raised for mixing matrices with no usable spectral gap."""


class QuantizationRangeError(ValueError):
    """Scalar input lies outside the quantization interval (beyond the clamp band)."""


class GradientBoundError(RuntimeError):
    """An iterate escaped the growing quantization range.

    This means the certified per-agent gradient bound C was too small for
    the trajectory actually realized, so the shared range schedule no
    longer covers the iterates.
    """


class NonFiniteIterateError(RuntimeError):
    """An agent iterate became NaN or infinite."""


class DegenerateInstanceError(RuntimeError):
    """Sampled regression data is rank-deficient (no strong convexity)."""


class ConfigError(ValueError):
    """Invalid experiment configuration field."""
