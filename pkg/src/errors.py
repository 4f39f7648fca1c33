class KnotFileError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InvalidKnot(ValueError):
    pass


class DegenerateProjection(RuntimeError):
    pass


class TooCloseToKnot(ValueError):
    def __init__(self, distance: float, floor: float):
        super().__init__(f"Point is {distance:.3e} from the knot, below the evaluation floor {floor:.3e}.")
        self.distance = distance
        self.floor = floor


class NotConverged(RuntimeError):
    def __init__(self, reason: str, iterations: int = 0):
        super().__init__(f"Newton refinement failed after {iterations} iterations: {reason}")
        self.reason = reason
        self.iterations = iterations


class DegenerateCritical(ValueError):
    pass


class IndexOutOfRange(RuntimeError):
    """A finite critical point of index 0 or 3. Harmonic functions have no interior extrema, so this is a bug."""


class WrongIndex(ValueError):
    pass


class TerminationMismatch(RuntimeError):
    def __init__(self, message: str, arcs):
        super().__init__(message)
        self.arcs = arcs


class InconsistentCriticalSet(ValueError):
    pass


class UnreliableCount(ValueError):
    pass


class UncatalogedKnot(KeyError):
    pass
