"""Exception types shared by the compiled core and the pure-Python fallback."""


class DomainError(ValueError):
    """A parameter lies outside its mathematical domain."""


class NotPositiveDefinite(ArithmeticError):
    """A spectral matrix failed to factorize; ``args[0]`` is the frequency index."""

    @property
    def index(self) -> int:
        return self.args[0]


class DataError(ValueError):
    """Input data are malformed or violate a data invariant."""
