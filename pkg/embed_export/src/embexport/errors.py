"""Exception types for the export tool."""


class EmbedExportError(Exception):
    """Base class for all errors raised by this package."""


class EncoderUnavailable(EmbedExportError):
    """The requested encoder backend (or its weights) cannot be loaded."""


class InvalidManifest(EmbedExportError):
    """The export manifest is malformed or references missing files."""


class IoError(EmbedExportError):
    """Reading or writing an embedding file failed."""
