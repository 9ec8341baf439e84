"""Segment ingestion, image preprocessing and the synthetic paired-modality corpus.

A manifest is a UTF-8 JSON-lines file, one segment per line::

    {"id": "seg1", "phi": "seg1.phi.mmte", "keyframes": ["seg1_0.ppm", "seg1_1.ppm"],
     "visual": "seg1.vgg.mmte"}

``phi`` may be replaced by ``"words": ["some", "transcript", ...]`` when a
vocabulary is supplied. ``visual`` is optional. Relative paths resolve against
the manifest's directory.
"""

from __future__ import annotations

import colorsys
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, InputError, LookupFailure
from .io import read_mmte, write_mmte

logger = logging.getLogger(__name__)


@dataclass
class Segment:
    id: str
    phi: np.ndarray | None
    keyframes: list = field(default_factory=list)
    representative: np.ndarray | None = None
    visual_feature: np.ndarray | None = None
    label: int | None = None


class Dataset(list):
    """List of segments plus ingestion bookkeeping."""

    def __init__(self, segments=(), dropped: int = 0, errors=None, meta=None):
        super().__init__(segments)
        self.dropped = dropped
        self.errors = list(errors or [])
        self.meta = dict(meta or {})

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self]

    def by_id(self, segment_id: str) -> Segment:
        for s in self:
            if s.id == segment_id:
                return s
        raise LookupFailure(f"unknown segment {segment_id!r}")

    def phi_matrix(self) -> np.ndarray:
        return np.stack([s.phi for s in self])

    def image_batch(self) -> np.ndarray:
        return np.stack([s.representative for s in self])

    def visual_matrix(self) -> np.ndarray:
        missing = [s.id for s in self if s.visual_feature is None]
        if missing:
            raise DataError(f"segments without visual features: {', '.join(missing[:5])}")
        return np.stack([s.visual_feature for s in self])


class Vocabulary(dict):
    """word -> embedding vector."""

    def __init__(self, entries=()):
        super().__init__()
        for word, vec in dict(entries).items():
            self[word] = np.asarray(vec, dtype=np.float64)
        dims = {v.shape for v in self.values()}
        if len(dims) > 1:
            raise DimensionError(f"vocabulary vectors have mixed shapes {sorted(dims)}")

    @property
    def dim(self) -> int:
        return next(iter(self.values())).shape[0] if self else 0

    @classmethod
    def load(cls, path) -> "Vocabulary":
        """Read the word2vec text format (an optional ``count dim`` header, then ``word v1 v2 ...``)."""
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                parts = line.split()
                if not parts:
                    continue
                if lineno == 0 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    continue
                try:
                    entries[parts[0]] = [float(x) for x in parts[1:]]
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno + 1}: malformed vector") from exc
        if not entries:
            raise DataError(f"{path}: empty vocabulary")
        return cls(entries)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self)} {self.dim}\n")
            for word, vec in self.items():
                fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


# ---------------------------------------------------------------------------
# images


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6, maxval 255) into an H×W×3 uint8 array."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6)")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    body = raw[pos:pos + width * height * 3]
    if len(body) != width * height * 3:
        raise DataError(f"{path}: PPM pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise DimensionError(f"PPM needs H×W×3 uint8 pixels, got {pixels.shape} {pixels.dtype}")
    h, w, _ = pixels.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """C×H×W values in [-1, 1] -> H×W×C bytes via round((v + 1) * 127.5)."""
    image = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint((image + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def select_representative_keyframe(frames) -> tuple[int, np.ndarray]:
    """Pick the frame closest (L1) to the per-pixel median of all frames; ties go to the lowest index."""
    if len(frames) == 0:
        raise InputError("no keyframes to choose from")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise DimensionError(f"keyframes have mismatched dimensions {sorted(shapes)}")
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in frames])
    median = np.median(stack, axis=0)
    dist = np.abs(stack - median).reshape(len(frames), -1).sum(axis=1)
    index = int(np.argmin(dist))
    return index, frames[index]


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    # row o averages the input interval [o, o+1) * n_in / n_out
    edges = np.arange(n_out + 1) * (n_in / n_out)
    cells = np.arange(n_in)
    lo = np.maximum(edges[:-1, None], cells[None, :])
    hi = np.minimum(edges[1:, None], cells[None, :] + 1)
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def preprocess_image(image: np.ndarray, target: int = 64) -> np.ndarray:
    """Scale the shorter side to ``target`` by area averaging, center-crop, map to [-1, 1].

    Returns a 3×target×target float array.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise InputError(f"degenerate image of shape {image.shape}")
    h, w = image.shape[:2]
    pixels = image[:, :, :3].astype(np.float64)
    if (h, w) != (target, target):
        short = min(h, w)
        new_h = target if h == short else int(round(h * target / short))
        new_w = target if w == short else int(round(w * target / short))
        rows, cols = _area_weights(h, new_h), _area_weights(w, new_w)
        pixels = np.einsum("ih,hwc,jw->ijc", rows, pixels, cols)
        top, left = (new_h - target) // 2, (new_w - target) // 2
        pixels = pixels[top:top + target, left:left + target]
    return np.clip(pixels / 127.5 - 1.0, -1.0, 1.0).transpose(2, 0, 1)


def average_word_embeddings(words, vocab: Vocabulary) -> tuple[np.ndarray, float]:
    """Mean embedding of in-vocabulary words and the fraction of words matched."""
    words = list(words)
    hits = [vocab[w] for w in words if w in vocab]
    if not hits:
        return np.zeros(vocab.dim), 0.0
    return np.mean(hits, axis=0), len(hits) / len(words)


# ---------------------------------------------------------------------------
# manifests


def load_dataset(manifest_path, vocab: Vocabulary | None = None, image_size: int = 64) -> Dataset:
    """Load segments with both modalities; drop the rest and keep per-segment errors."""
    manifest_path = Path(manifest_path)
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}:{lineno}: invalid JSON") from exc
    if not records:
        raise DataError(f"{manifest_path}: manifest is empty")

    base = manifest_path.parent
    segments, errors, dropped = [], [], 0
    seen = set()
    phi_dim = None
    for rec in records:
        seg_id = str(rec.get("id", ""))
        try:
            if not seg_id:
                raise DataError("record without id")
            if seg_id in seen:
                raise DataError("duplicate id")
            seg = _load_record(rec, base, vocab, image_size)
        except (DataError, DimensionError, InputError, OSError) as exc:
            errors.append((seg_id, str(exc)))
            continue
        if seg is None:
            dropped += 1
            continue
        if phi_dim is None:
            phi_dim = seg.phi.shape[0]
        elif seg.phi.shape[0] != phi_dim:
            errors.append((seg_id, f"text embedding has {seg.phi.shape[0]} dims, expected {phi_dim}"))
            continue
        seen.add(seg_id)
        segments.append(seg)
    if dropped:
        logger.info("dropped %d segments lacking a modality", dropped)
    for seg_id, msg in errors:
        logger.warning("segment %s: %s", seg_id, msg)
    if not segments:
        raise DataError(f"{manifest_path}: no usable segments ({dropped} dropped, {len(errors)} errors)")
    return Dataset(segments, dropped=dropped, errors=errors)


def _load_record(rec: dict, base: Path, vocab, image_size: int) -> Segment | None:
    seg_id = str(rec["id"])
    phi = None
    if rec.get("phi"):
        phi = read_mmte(base / rec["phi"]).astype(np.float32).reshape(-1)
    elif rec.get("words"):
        if vocab is None:
            raise DataError("record has words but no vocabulary was given")
        phi, coverage = average_word_embeddings(rec["words"], vocab)
        if coverage == 0.0:
            phi = None
        else:
            phi = phi.astype(np.float32)
    frames = [read_image(base / p) for p in rec.get("keyframes") or []]
    if phi is None or not frames:
        return None
    _, rep = select_representative_keyframe(frames)
    visual = None
    if rec.get("visual"):
        visual = read_mmte(base / rec["visual"]).astype(np.float32).reshape(-1)
    return Segment(seg_id, phi, frames, preprocess_image(rep, image_size).astype(np.float32), visual,
                   rec.get("label"))


def write_dataset(dataset, directory, name: str = "manifest.jsonl") -> Path:
    """Write segments (MMTE text embeddings, PPM keyframes, MMTE visual features) plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for seg in dataset:
        rec = {"id": seg.id}
        if seg.phi is not None:
            rec["phi"] = f"{seg.id}.phi.mmte"
            write_mmte(directory / rec["phi"], np.asarray(seg.phi, dtype=np.float32))
        frames = seg.keyframes or ([to_uint8(seg.representative)] if seg.representative is not None else [])
        rec["keyframes"] = []
        for i, frame in enumerate(frames):
            fname = f"{seg.id}_{i}.ppm"
            write_ppm(directory / fname, np.asarray(frame, dtype=np.uint8))
            rec["keyframes"].append(fname)
        if seg.visual_feature is not None:
            rec["visual"] = f"{seg.id}.visual.mmte"
            write_mmte(directory / rec["visual"], np.asarray(seg.visual_feature, dtype=np.float32))
        if seg.label is not None:
            rec["label"] = int(seg.label)
        lines.append(json.dumps(rec))
    path = directory / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_groundtruth(path) -> dict[str, set]:
    """``anchor<TAB>target`` lines; presence of a line means relevant."""
    truth: dict[str, set] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read ground truth {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected anchor<TAB>target")
        truth.setdefault(parts[0], set()).add(parts[1])
    return truth


def write_groundtruth(path, truth: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for anchor in sorted(truth):
            for target in sorted(truth[anchor]):
                fh.write(f"{anchor}\t{target}\n")


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SyntheticSpec:
    classes: int = 4
    segments_per_class: int = 100
    image_size: int = 16
    text_dim: int = 32
    text_noise: float = 0.5
    pixel_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise InputError("synthetic data needs at least 2 classes")
        for name in ("segments_per_class", "image_size", "text_dim"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if self.text_noise < 0 or self.pixel_noise < 0:
            raise InputError("noise levels must be non-negative")


def class_hue(c: int, classes: int) -> float:
    return c / classes


def class_motif(c: int, classes: int, size: int) -> np.ndarray:
    """Solid class-hue background with a bright square whose position encodes the class."""
    r, g, b = colorsys.hsv_to_rgb(class_hue(c, classes), 0.9, 0.8)
    img = np.empty((3, size, size))
    img[0], img[1], img[2] = r, g, b
    side = max(1, size // 4)
    span = size - side
    pos = (c * span) // max(classes - 1, 1)
    img[:, pos:pos + side, pos:pos + side] = 1.0
    return img * 2.0 - 1.0


def _prototypes(rng, classes: int, dim: int, max_cos: float = 0.3, tries: int = 10_000) -> np.ndarray:
    for _ in range(tries):
        protos = rng.normal(size=(classes, dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        cos = protos @ protos.T
        np.fill_diagonal(cos, -1.0)
        if cos.max() <= max_cos:
            return protos
    raise InputError(f"could not separate {classes} prototypes in {dim} dims to cosine <= {max_cos}")


def generate_synthetic_dataset(spec: SyntheticSpec) -> tuple[Dataset, dict, Vocabulary]:
    """Seeded class-structured corpus with same-class relevance.

    ``dataset.meta`` carries ``prototypes`` (class text vectors), ``hues`` and
    ``motifs`` for checks that need the generating truth.
    """
    rng = np.random.default_rng(spec.seed)
    protos = _prototypes(rng, spec.classes, spec.text_dim)
    motifs = np.stack([class_motif(c, spec.classes, spec.image_size) for c in range(spec.classes)])
    width = len(str(spec.classes * spec.segments_per_class - 1))
    segments = []
    for c in range(spec.classes):
        for j in range(spec.segments_per_class):
            idx = c * spec.segments_per_class + j
            phi = protos[c] + rng.normal(0.0, spec.text_noise, size=spec.text_dim) if spec.text_noise else protos[c]
            img = np.clip(motifs[c] + rng.normal(0.0, spec.pixel_noise, size=motifs[c].shape), -1.0, 1.0)
            img = img.astype(np.float32)
            segments.append(Segment(f"s{idx:0{width}d}", phi.astype(np.float32), [to_uint8(img)], img,
                                    img.reshape(-1).copy(), label=c))
    truth = {}
    for s in segments:
        truth[s.id] = {t.id for t in segments if t.label == s.label and t.id != s.id}
    vocab = Vocabulary({f"class{c}": protos[c] for c in range(spec.classes)})
    meta = {"prototypes": protos, "hues": [class_hue(c, spec.classes) for c in range(spec.classes)],
            "motifs": motifs, "chance": (spec.segments_per_class - 1) / (len(segments) - 1)}
    return Dataset(segments, meta=meta), truth, vocab
