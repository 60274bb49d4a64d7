class TubeTLTError(Exception):
    pass


class FormulaSyntaxError(TubeTLTError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownPredicateError(TubeTLTError):
    pass


class IntervalError(TubeTLTError):
    pass


class UnsupportedFormulaError(TubeTLTError):
    pass


class HorizonError(TubeTLTError):
    pass


class InsufficientSignalError(TubeTLTError):
    pass


class DomainError(TubeTLTError):
    pass


class GridMismatchError(TubeTLTError):
    pass


class MemoryBudgetError(TubeTLTError):
    pass


class ConfigError(TubeTLTError):
    pass
