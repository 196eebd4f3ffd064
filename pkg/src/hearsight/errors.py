"""Exception type shared by every module."""


class DomainError(ValueError):
    """A domain-level failure attributed to a module and operation.

    The CLI turns these into a structured stderr diagnostic and exit code 1.
    """

    def __init__(self, module: str, operation: str, message: str):
        super().__init__(f"[{module}.{operation}] {message}")
        self.module = module
        self.operation = operation
        self.message = message

    def as_dict(self) -> dict:
        return {"module": self.module, "operation": self.operation, "message": self.message}
