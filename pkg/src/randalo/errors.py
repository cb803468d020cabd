"""Exception hierarchy shared by every module in the package."""


class RandALOError(Exception):
    """Base class; ``module`` names where the failure originated."""

    module = "randalo"

    def __init__(self, *args, module=None):
        super().__init__(*args)
        if module is not None:
            self.module = module


class DimensionMismatch(RandALOError, ValueError):
    module = "linops"


class NonConvergence(RandALOError, RuntimeError):
    module = "linops"

    def __init__(self, iterations, residual, what="iterative solver", module=None):
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(residual {residual:.3e})",
            module=module,
        )
        self.iterations = iterations
        self.residual = residual


class SingularMatrix(RandALOError, ArithmeticError):
    module = "linops"


class SingularKkt(SingularMatrix):
    """The KKT system has no unique solution (QP minimizer not unique)."""


class SingularSystem(SingularMatrix):
    module = "jacobian"


class InvalidSpec(RandALOError, ValueError):
    module = "model"


class UnsupportedSpec(InvalidSpec):
    module = "jacobian"


class DegenerateGroup(RandALOError, ArithmeticError):
    module = "model"


class ZeroDerivative(RandALOError, ArithmeticError):
    module = "jacobian"


class DivisionGuard(RandALOError, ArithmeticError):
    module = "alo"

    def __init__(self, index, value, module=None):
        super().__init__(
            f"1 - d[{index}] = {1 - value:.3e} is below the division guard",
            module=module,
        )
        self.index = index
        self.value = value


class DegenerateDesign(RandALOError, ValueError):
    module = "alo"


class UnsupportedFamily(RandALOError, ValueError):
    module = "experiments"


class ParseError(RandALOError, ValueError):
    module = "io"

    def __init__(self, line, reason, module=None):
        super().__init__(f"line {line}: {reason}", module=module)
        self.line = line
        self.reason = reason


class InconsistentDimension(RandALOError, ValueError):
    module = "io"
