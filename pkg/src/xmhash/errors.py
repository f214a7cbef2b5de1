"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition (shape, range, length)."""


class SingularSystemError(ArithmeticError):
    """A linear system could not be factorized (non-positive pivot)."""


class DatasetParseError(ValueError):
    """A dataset file line is malformed or violates a record invariant."""

    def __init__(self, record_index: int, message: str):
        self.record_index = record_index
        super().__init__(f"record {record_index}: {message}")
