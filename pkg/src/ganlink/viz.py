"""Crossmodal visualization: text -> image generation and image -> top words."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Vocabulary, read_ppm, to_uint8, write_ppm
from .errors import DimensionError, InputError, UsageError
from .models import GeneratorConfig, ModelBundle, generator_forward
from .retrieval import TIE_DECIMALS
from .tensor import BN_EPS, Tensor, conv2d, deconv2d, get_dtype, no_record

DEFAULT_TOP_WORDS = 15


@dataclass
class GeneratedImage:
    pixels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.abs(self.pixels).max(initial=0.0) > 1.0:
            raise InputError("generated pixels must lie in [-1, 1]")


def render_text_to_images(bundle: ModelBundle, phi, n: int = 4, seed: int = 0,
                          phi_source: str = "vector") -> list[GeneratedImage]:
    """``n`` images for one text embedding, one independent U(-1, 1) noise draw each."""
    bundle.require("cgan")
    if bundle.epochs == 0:
        raise UsageError("refusing to render from an untrained generator")
    if n < 1:
        raise InputError("n must be at least 1")
    cfg: GeneratorConfig = bundle.configs["generator"]
    phi = np.asarray(phi, dtype=get_dtype()).reshape(1, -1)
    if phi.shape[1] != cfg.text_dim:
        raise DimensionError(f"text embedding has {phi.shape[1]} dims, generator expects {cfg.text_dim}")
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, cfg.noise_dim)).astype(get_dtype())
    with no_record():
        images = generator_forward(bundle, z, np.repeat(phi, n, axis=0), "infer").data
    ckpt = bundle.digest()
    return [GeneratedImage(images[i].copy(), {"checkpoint": ckpt, "phi_source": phi_source, "z_seed": seed,
                                              "index": i})
            for i in range(n)]


def invert_generator(bundle: ModelBundle, image) -> np.ndarray:
    """Map an image back to a ``[z ; phi]``-shaped vector through the generator's transposed kernels.

    Layers are undone in reverse order with their linear adjoints: the output
    convolution becomes a transposed convolution, each transposed convolution
    becomes a convolution with the same kernels, and the dense layers are
    multiplied by their transposes. Activations pass through unchanged and
    batch normalization contributes only its per-channel scale
    ``gamma / sqrt(running_var + eps)``, so the whole map is linear.
    """
    bundle.require("cgan")
    cfg: GeneratorConfig = bundle.configs["generator"]
    p = bundle.params["generator"]
    x = image.data if isinstance(image, Tensor) else np.asarray(image)
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if x.shape != expected:
        raise DimensionError(f"image must have shape {expected}, got {x.shape}")
    dtype = get_dtype()
    with no_record():
        h = deconv2d(Tensor(x[None].astype(dtype)), p["out.kernel"], stride=1, padding=1)
        for i in reversed(range(len(cfg.deconv_maps))):
            state = bundle.bn[f"generator.bn{i}"]
            gain = p[f"bn{i}.gamma"].data / np.sqrt(state.var + BN_EPS)
            h = Tensor((h.data * gain.reshape(1, -1, 1, 1)).astype(dtype))
            h = conv2d(h, p[f"deconv{i}.kernel"], stride=2, padding=1)
    flat = h.data.reshape(1, -1).astype(np.float64)
    joint = flat @ p["project.weight"].data.T.astype(np.float64)
    z_part, text_part = joint[:, :cfg.noise_dim], joint[:, cfg.noise_dim:]
    phi_part = text_part @ p["text_fc.weight"].data.T.astype(np.float64)
    return np.concatenate([z_part, phi_part], axis=1)[0]


def slice_text_part(preimage, text_dim: int = 100, noise_dim: int = 10) -> np.ndarray:
    """Trailing ``text_dim`` coordinates of a ``[z ; phi]`` vector."""
    v = np.asarray(preimage).ravel()
    if v.size != noise_dim + text_dim:
        raise DimensionError(f"preimage has length {v.size}, expected {noise_dim + text_dim}")
    return v[noise_dim:].copy()


@dataclass
class WordRanking:
    entries: list

    def words(self) -> list[str]:
        return [w for w, _ in self.entries]

    def to_tsv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for word, sim in self.entries:
                writer.writerow([word, f"{sim:.6f}"])


def nearest_words(vector, vocab: Vocabulary, k: int = DEFAULT_TOP_WORDS) -> WordRanking:
    """Top-k vocabulary words by descending cosine similarity; ties by word."""
    if not vocab:
        raise InputError("vocabulary is empty")
    if not 1 <= k <= len(vocab):
        raise InputError(f"k must lie in [1, {len(vocab)}], got {k}")
    q = np.asarray(vector, dtype=np.float64).ravel()
    qn = np.linalg.norm(q)
    if qn == 0:
        raise InputError("query vector is zero and has no direction")
    words = list(vocab)
    mat = np.stack([vocab[w] for w in words])
    if mat.shape[1] != q.size:
        raise DimensionError(f"query has {q.size} dims, vocabulary vectors have {mat.shape[1]}")
    norms = np.linalg.norm(mat, axis=1)
    sims = np.divide(mat @ q, norms * qn, out=np.zeros(len(words)), where=norms > 0)
    order = np.lexsort((np.asarray(words), -np.round(sims, TIE_DECIMALS)))[:k]
    return WordRanking([(words[i], float(sims[i])) for i in order])


def write_image(image: GeneratedImage | np.ndarray, path) -> None:
    """PPM P6 with v -> round((v + 1) * 127.5), clamped to [0, 255]."""
    pixels = image.pixels if isinstance(image, GeneratedImage) else np.asarray(image)
    if pixels.ndim != 3:
        raise DimensionError(f"image must be C×H×W, got {pixels.shape}")
    write_ppm(path, to_uint8(pixels))


def read_image_tensor(path) -> np.ndarray:
    """PPM back to C×H×W in [-1, 1]."""
    return read_ppm(path).transpose(2, 0, 1).astype(np.float64) / 127.5 - 1.0


def mean_hue(image: np.ndarray) -> float:
    """Hue in [0, 1) of the image's mean color (C×H×W in [-1, 1])."""
    import colorsys

    rgb = (np.asarray(image, dtype=np.float64).reshape(3, -1).mean(axis=1) + 1.0) / 2.0
    return colorsys.rgb_to_hsv(*np.clip(rgb, 0.0, 1.0))[0]


def hue_distance(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)
