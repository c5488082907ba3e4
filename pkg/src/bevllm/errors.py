"""Exception types shared across the pipeline."""


class InputDomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent."""


class ShapeError(ValueError):
    """Tensor shapes or widths do not line up."""


class NumericError(ArithmeticError):
    """A computation produced or would produce non-finite values."""


class TemplateError(ValueError):
    """A chat prompt or caption template is malformed."""


class TensorFormatError(ValueError):
    """A tensor container file is corrupt or inconsistent."""


class EmbedderError(RuntimeError):
    """The contextual embedder used by BERT-score failed."""
