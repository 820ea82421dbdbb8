"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes disagree; the message names the offending axis."""


class ConfigurationError(ValueError):
    """A model or experiment configuration cannot be realised."""


class DegenerateMapError(ValueError):
    """A heatmap has no mass or no variance where some is required."""


class ShardError(Exception):
    """Base class for shard read failures."""


class BadMagicError(ShardError):
    pass


class VersionMismatchError(ShardError):
    pass


class TruncatedShardError(ShardError):
    pass


class ChecksumMismatchError(ShardError):
    pass
