"""Exception hierarchy shared by the engine, storage layer and harness."""


class PembihsError(Exception):
    """Base class for all engine errors."""


class InputError(PembihsError, ValueError):
    """Malformed or illegal user input (states, instance files, names)."""


class StorageError(PembihsError, OSError):
    """A bucket file or directory could not be written."""


class CorruptionError(PembihsError):
    """A bucket or cache file does not decode to legal records."""


class CapacityError(PembihsError, MemoryError):
    """An allocation would exceed the configured memory or build budget."""


class UnsupportedError(PembihsError, NotImplementedError):
    """The requested combination is not supported."""


class SearchTimeout(PembihsError):
    """The per-search time limit elapsed."""
