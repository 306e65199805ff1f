"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (shape, range, mask index)."""


class DegenerateParameterization(ContractViolation):
    """The model exposes no free parameters (p = 0) where a fit requires at least one."""


class RolloutOverflow(ArithmeticError):
    """A rollout produced a non-finite state.

    Carries the first offending step index so diverging line-search
    trials can be reported precisely.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at rollout step {step}")


class Nonconvergence(RuntimeError):
    """An iterative solver exhausted its budget.

    Attributes
    ----------
    best: best iterate found (solver-specific type).
    grad_norm: gradient (or gradient-mapping) norm at the best iterate.
    iterations: iterations spent.
    """

    def __init__(self, message: str, best=None, grad_norm: float | None = None,
                 iterations: int | None = None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm
        self.iterations = iterations


class StrongConvexityViolation(RuntimeError):
    """The control-space Hessian failed its positive-definiteness floor."""
