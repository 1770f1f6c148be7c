"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors are argparse's domain,
DataError exits 3, RemoteBackendError exits 4.
"""


class FedragError(Exception):
    """Base class for all package errors."""


class DataError(FedragError):
    """Malformed or inconsistent input data (corpus files, datasets, models)."""


class RemoteBackendError(FedragError):
    """A remote embedder, selector, or judge failed or returned garbage."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status
