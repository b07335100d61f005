"""Error types shared across the library."""


class NumericalError(RuntimeError):
    """A linear-algebra or root-finding step failed beyond recovery.

    ``pivot`` is the 1-based index of the failing Cholesky pivot when the
    failure came from a factorization, else None.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot
