"""Exception types shared across the simulator."""


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class NumericError(ArithmeticError):
    """An iterative routine failed to converge."""

    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class DegeneracyError(ArithmeticError):
    """Gram-Schmidt hit a column that is (numerically) in the span of its predecessors."""

    def __init__(self, column, residual):
        super().__init__(f"column {column} is degenerate (residual norm {residual:.3e})")
        self.column = column
        self.residual = residual


class UndefinedRankError(ValueError):
    """Effective rank requested for an all-zero spectrum."""


class ProtocolError(ValueError):
    """A client payload does not match what the server expects."""


class ClientError(RuntimeError):
    """Wraps a failure raised while a specific client was training."""

    def __init__(self, client_id, cause):
        super().__init__(f"client {client_id}: {cause}")
        self.client_id = client_id
        self.cause = cause


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TargetNotReachedError(RuntimeError):
    """Training hit its step cap before reaching the target metric."""

    def __init__(self, regime, target, best, steps):
        super().__init__(f"{regime}: target accuracy {target:.4f} not reached within {steps} "
                         f"evaluations (best {best:.4f})")
        self.regime = regime
        self.target = target
        self.best = best
