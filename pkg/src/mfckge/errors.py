"""Exception hierarchy shared by all mfckge modules."""


class MFCKGEError(Exception):
    """Base class for every error raised by this package."""


class DatasetIOError(MFCKGEError, OSError):
    pass


class ParseError(MFCKGEError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EmptySnapshot(MFCKGEError, ValueError):
    pass


class InvariantViolation(MFCKGEError, ValueError):
    pass


class ResolutionError(MFCKGEError, LookupError):
    pass


class CorruptStore(MFCKGEError, RuntimeError):
    pass


class VersionError(MFCKGEError, ValueError):
    pass


class DimError(MFCKGEError, ValueError):
    pass


class TooFewEntities(MFCKGEError, ValueError):
    pass


class ProtocolError(MFCKGEError, RuntimeError):
    pass


class IrreversibleError(MFCKGEError, ValueError):
    pass


class ConfigError(MFCKGEError, ValueError):
    pass
