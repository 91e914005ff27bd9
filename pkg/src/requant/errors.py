"""Exception types shared across modules."""


class RequantError(Exception):
    """Base class for library errors."""


class SchemeError(RequantError, ValueError):
    """Invalid or unsupported quantization scheme."""


class DegenerateContextError(RequantError):
    """Integral requested at a grid point where alpha = 0 and no limit applies."""


class NonConvergenceError(RequantError, ArithmeticError):
    """Adaptive quadrature did not reach its tolerance."""


class OverflowRangeError(RequantError, OverflowError):
    """Special-function value outside the representable range."""


class ConfigError(RequantError, ValueError):
    """Invalid configuration or input stream."""
