"""Exception hierarchy shared by the lab. Each class knows its CLI exit code."""


class HalfwaveError(Exception):
    exit_code = 1


class ConfigError(HalfwaveError):
    exit_code = 2


class GridError(ConfigError):
    pass


class ConvergenceError(HalfwaveError):
    exit_code = 3

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SolvabilityError(ConvergenceError):
    """Right-hand side of a constrained solve is not orthogonal to the kernel."""

    def __init__(self, identity, overlap, tolerance):
        super().__init__(
            f"solvability identity '{identity}' violated: relative overlap {overlap:.3e} > {tolerance:.1e}"
        )
        self.identity = identity
        self.overlap = overlap
        self.tolerance = tolerance


class StepSizeError(ConvergenceError):
    def __init__(self, dt, admissible_dt):
        super().__init__(f"time step {dt:.3e} exceeds admissible {admissible_dt:.3e}")
        self.dt = dt
        self.admissible_dt = admissible_dt


class NumericalCorruptionError(HalfwaveError):
    exit_code = 4

    def __init__(self, message, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid
