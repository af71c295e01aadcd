"""Exception types shared across the package."""


class GatewayError(Exception):
    """Base class for model-gateway failures."""


class RetryExhausted(GatewayError):
    """Transport kept failing after the configured number of attempts."""


class FixtureMiss(GatewayError):
    """Replay mode saw a request with no matching cassette record."""


class ProtocolError(GatewayError):
    """The endpoint answered with a malformed or unexpected payload."""


class PriceUnknown(GatewayError):
    """A ledger entry references a model absent from the price table."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown option."""


class SchemaError(ValueError):
    """Layout JSON violates the expected block schema."""

    def __init__(self, message: str, block_index: int | None = None):
        if block_index is not None:
            message = f"block {block_index}: {message}"
        super().__init__(message)
        self.block_index = block_index


class AssetMissing(FileNotFoundError):
    """A storage path does not resolve inside the asset repository."""


class DimensionError(ValueError):
    """A vector does not match the index dimension."""


class BlockNotFound(KeyError):
    """No content block with the requested id."""


class ExtractionEmpty(RuntimeError):
    """No valid entity or relation records survived the judge loop."""


class DescriptionUnavailable(RuntimeError):
    """The perception endpoint could not describe an asset."""
