class CtalError(Exception):
    pass


class UserError(CtalError):
    """
    Raised for problems the caller can fix: bad configuration, unreadable
    inputs, malformed files. The CLI maps these to exit code 1.
    """
    pass


class DimensionError(CtalError, ValueError):
    pass


class DegenerateAttentionError(CtalError):
    pass


class NonFiniteError(CtalError):
    pass


class MetricUndefinedError(CtalError, ValueError):
    pass


class UnknownTokenError(CtalError, ValueError):
    pass


class AudioTooShortError(UserError, ValueError):
    pass


class ConfigError(UserError):
    pass


class ManifestError(UserError):
    pass


class FormatError(UserError):
    pass


class CheckpointError(UserError):
    pass


class EmptyCorpusError(UserError, ValueError):
    pass
