"""Offline embedding export to the EMB1 sidecar format."""

from .emb1 import read_embeddings, write_embeddings
from .encoders import ColorSemanticsEncoder, PretrainedEncoder, make_encoder
from .errors import EmbedExportError, EncoderUnavailable, InvalidManifest, IoError
from .export import export_images, export_text
from .manifest import ExportManifest, load_manifest

__version__ = "0.1.0"
