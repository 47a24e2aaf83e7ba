"""Exception types raised by the solvers and checkers."""


class MfgLabError(Exception):
    """Base class for all package errors."""


class NonPositiveDiffusion(MfgLabError):
    pass


class DegenerateDiffusion(MfgLabError):
    pass


class MassDrift(MfgLabError):
    def __init__(self, frame, mass, tol):
        self.frame, self.mass, self.tol = frame, mass, tol
        super().__init__(f"frame {frame}: mass {mass:.12g} outside 1 +/- {tol:g}")


class GridMismatch(MfgLabError):
    pass


class KinkWithoutHint(MfgLabError):
    pass


class NotApplicable(MfgLabError):
    pass


class SignConditionViolated(MfgLabError):
    """The constructed value gradient does not keep the sign the branch requires."""

    def __init__(self, t, x, value, expected, population=None):
        self.t, self.x, self.value, self.expected = t, x, value, expected
        self.population = population
        who = "" if population is None else f"population {population}: "
        super().__init__(
            f"{who}gradient sign condition ({expected}) fails first at t={t:.6g}, "
            f"x={x:.6g} where v_x={value:.6g}"
        )


class PreconditionFail(MfgLabError):
    def __init__(self, violated):
        self.violated = list(violated)
        super().__init__("coefficient conditions violated: " + "; ".join(self.violated))


class NoConvergence(MfgLabError):
    def __init__(self, iterations, last_step):
        self.iterations, self.last_step = iterations, last_step
        super().__init__(f"no convergence after {iterations} iterations (last step {last_step:.3e})")


class NoPositiveThreshold(MfgLabError):
    pass


class ConfigError(MfgLabError):
    pass
