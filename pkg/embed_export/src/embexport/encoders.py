"""Joint image/text encoders.

Two backends share one interface: a pretrained vision-language model
(optional dependency, requires downloaded weights) and a deterministic
built-in color-semantics encoder that needs no weights at all. Both map
images and text into the same space so cosine ranking works across
modalities.
"""

from __future__ import annotations

import numpy as np

from .errors import EncoderUnavailable

# -- built-in fallback --------------------------------------------------------

# prototype colors defining the shared embedding space, one channel per name
_COLOR_PROTOS: list[tuple[str, tuple[float, float, float]]] = [
    ("red", (0.80, 0.15, 0.15)),
    ("green", (0.15, 0.70, 0.20)),
    ("blue", (0.15, 0.25, 0.80)),
    ("yellow", (0.85, 0.80, 0.15)),
    ("cyan", (0.15, 0.75, 0.75)),
    ("magenta", (0.80, 0.15, 0.75)),
    ("orange", (0.90, 0.55, 0.10)),
    ("purple", (0.50, 0.20, 0.60)),
    ("brown", (0.45, 0.30, 0.15)),
    ("white", (0.95, 0.95, 0.95)),
    ("gray", (0.50, 0.50, 0.50)),
    ("black", (0.08, 0.08, 0.08)),
]
_SYNONYMS = {"grey": "gray", "violet": "purple", "crimson": "red", "scarlet": "red",
             "navy": "blue", "teal": "cyan", "lime": "green", "gold": "yellow"}
_SIGMA = 0.25


class ColorSemanticsEncoder:
    """Weights-free joint encoder over a fixed palette of color names.

    Images become soft color-name histograms; text becomes a bag of
    recognized color words in the same channel order. Far weaker than a
    learned encoder, but deterministic and fully offline.
    """

    name = "color-semantics"

    @property
    def dim(self) -> int:
        return len(_COLOR_PROTOS)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """image: (H, W, 3) float in [0, 1] or uint8."""
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
        if img.max() > 1.0:
            img = img / 255.0
        pix = img.reshape(-1, 3)
        protos = np.array([rgb for _, rgb in _COLOR_PROTOS])
        d2 = ((pix[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-0.5 * d2 / _SIGMA**2)
        hist = w.sum(axis=0)
        n = np.linalg.norm(hist)
        return hist / n if n > 0 else np.full(self.dim, 1.0 / np.sqrt(self.dim))

    def encode_text(self, prompt: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        names = {name: i for i, (name, _) in enumerate(_COLOR_PROTOS)}
        for word in prompt.lower().replace(",", " ").replace(".", " ").split():
            word = _SYNONYMS.get(word, word)
            if word in names:
                vec[names[word]] += 1.0
        n = np.linalg.norm(vec)
        if n == 0:
            # no recognized word: neutral direction, still unit norm
            return np.full(self.dim, 1.0 / np.sqrt(self.dim))
        return vec / n


# -- pretrained backend -------------------------------------------------------


class PretrainedEncoder:
    """Vision-language model backend (see encoder.lock for the pinned variant).

    Loads lazily; raises EncoderUnavailable when the optional dependency or
    its weights are missing, e.g. on an offline machine.
    """

    name = "pretrained"
    MODEL = "ViT-B-32"
    WEIGHTS = "laion2b_s34b_b79k"

    def __init__(self):
        try:
            import open_clip
            import torch
        except ImportError as e:
            raise EncoderUnavailable(
                f"open_clip/torch not installed: {e}"
            ) from e
        try:
            self._model, _, self._preprocess = open_clip.create_model_and_transforms(
                self.MODEL, pretrained=self.WEIGHTS
            )
            self._tokenize = open_clip.get_tokenizer(self.MODEL)
        except Exception as e:  # weight download/load failure
            raise EncoderUnavailable(f"cannot load {self.MODEL}: {e}") from e
        self._torch = torch
        self._model.eval()

    @property
    def dim(self) -> int:
        return self._model.visual.output_dim

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        from PIL import Image

        img = np.asarray(image)
        if img.dtype != np.uint8:
            img = (np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8)
        tensor = self._preprocess(Image.fromarray(img)).unsqueeze(0)
        with self._torch.no_grad():
            feat = self._model.encode_image(tensor)[0].numpy().astype(np.float64)
        return feat / np.linalg.norm(feat)

    def encode_text(self, prompt: str) -> np.ndarray:
        tokens = self._tokenize([prompt])
        with self._torch.no_grad():
            feat = self._model.encode_text(tokens)[0].numpy().astype(np.float64)
        return feat / np.linalg.norm(feat)


def make_encoder(kind: str):
    if kind == "fallback":
        return ColorSemanticsEncoder()
    if kind == "clip":
        return PretrainedEncoder()
    raise ValueError(f"unknown encoder {kind!r}")
