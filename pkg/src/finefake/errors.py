"""Exception types shared across the package.

The service layer and CLI map these onto HTTP status codes and process
exit codes, so raising the right class matters more than the message.
"""


class ConfigurationError(ValueError):
    """A config value violates an invariant (bad spec field, bad flag)."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with the declared contract."""


class DataError(ValueError):
    """A dataset artifact (manifest, image file) is missing or malformed."""


class ProtocolError(RuntimeError):
    """A training/evaluation precondition is not met (single-class data,
    empty split, diverged loss)."""


class CheckpointError(RuntimeError):
    """A checkpoint is missing, unreadable, or incompatible with the
    requested configuration."""


class SelectionError(RuntimeError):
    """Foreground selection produced no tokens to combine."""
