"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its stable contract (2 input, 3 numerical, 4 guard).
"""


class EsbError(Exception):
    exit_code = 1


class InputError(EsbError, ValueError):
    exit_code = 2


class OutOfRange(InputError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"{field} out of range")


class DimensionMismatch(InputError):
    pass


class EmptySource(InputError):
    pass


class InfeasibleDesign(InputError):
    pass


class NumericalError(EsbError, ArithmeticError):
    exit_code = 3


class SingularGram(NumericalError):
    def __init__(self, model=(), message=None):
        self.model = tuple(model)
        super().__init__(message or f"X_S^T X_S is singular for S={list(self.model)}")


class InitSingular(SingularGram):
    pass


class GuardError(EsbError):
    exit_code = 4


class TooManyModels(GuardError):
    def __init__(self, count, limit):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} candidate supports exceed the limit of {limit}")


class TooManySupports(TooManyModels):
    pass
