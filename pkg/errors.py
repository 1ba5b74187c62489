class DiffPassError(Exception):
    """Base class for every error raised by the differential passivity toolkit."""
    pass
