"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """A field does not live on the expected grid."""


class UnderResolvedError(ValueError):
    """A length scale is too small (or too large) for the grid."""


class WickOverflowError(FloatingPointError):
    """Exponent of a Wick exponential exceeded the double-precision guard."""

    def __init__(self, max_exponent, alpha, constant, threshold=700.0):
        self.max_exponent = float(max_exponent)
        self.alpha = float(alpha)
        self.constant = float(constant)
        self.threshold = float(threshold)
        super().__init__(
            f"Wick exponent reached {self.max_exponent:.3g} > {self.threshold:g} "
            f"(alpha={self.alpha:.6g}, subtracted constant={self.constant:.6g}); "
            "parameters are not resolved on this grid"
        )

    def to_dict(self):
        return {
            "error": "wick_overflow",
            "max_exponent": self.max_exponent,
            "alpha": self.alpha,
            "constant": self.constant,
            "threshold": self.threshold,
        }


class DynamicsInstabilityError(RuntimeError):
    """The time stepper produced a non-finite or exploding state."""

    def __init__(self, step, dt, norm):
        self.step, self.dt, self.norm = int(step), float(dt), float(norm)
        super().__init__(
            f"state norm {self.norm:.3g} at step {self.step}; retry with dt < {self.dt:g}"
        )


class IndexRejectedError(ValueError):
    """Besov or Lyapunov indices fail the admissibility conditions."""

    def __init__(self, message, violations=None):
        self.violations = dict(violations or {})
        super().__init__(message)


class DegenerateVarianceError(ValueError):
    """A Monte Carlo residual has zero variance but a nonzero mean."""


class TrajectoryMismatchError(ValueError):
    """A recorded trajectory does not match the requested flow."""


class ConfigError(ValueError):
    """Invalid experiment configuration. ``field`` is the dotted key path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
