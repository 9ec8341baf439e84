"""Model builders and forward passes.

Four networks are supported:

* the conditional GAN generator ``G(z, phi)`` producing ``channels×S×S`` images,
* the matching-aware discriminator ``D(x, phi)`` whose raw 1×1-convolution
  output is read out as the multimodal embedding,
* a multimodal autoencoder with one input/output branch per modality,
* a BiDNN: two crossmodal translators sharing one central matrix (used
  transposed in the reverse direction).
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InputError, UsageError
from .nn import ParamSet, ParamSpec, init_params
from .tensor import (BNState, Tensor, batchnorm, concat, conv2d, deconv2d, dense, flatten, get_dtype, leaky_relu,
                     reshape, sigmoid, tanh, tile_spatial, transpose)

KINDS = ("cgan", "ae", "bidnn")
MODES = ("train", "infer")


def _positive(cfg, *names):
    for name in names:
        value = getattr(cfg, name)
        values = value if isinstance(value, (list, tuple)) else [value]
        if not values or any(int(v) <= 0 for v in values):
            raise ConfigError(f"{type(cfg).__name__}.{name} must be positive, got {value}")


@dataclass
class GeneratorConfig:
    noise_dim: int = 10
    text_dim: int = 100
    text_fc: int = 256
    deconv_maps: list = field(default_factory=lambda: [256, 128, 64, 32])
    image_size: int = 64
    channels: int = 3

    def __post_init__(self):
        self.deconv_maps = list(self.deconv_maps)
        _positive(self, "noise_dim", "text_dim", "text_fc", "deconv_maps", "image_size", "channels")
        if 4 * 2 ** len(self.deconv_maps) != self.image_size:
            raise ConfigError(
                f"generator starts at 4×4 and doubles {len(self.deconv_maps)} times, "
                f"reaching {4 * 2 ** len(self.deconv_maps)} instead of image_size {self.image_size}")


@dataclass
class DiscriminatorConfig:
    conv_maps: list = field(default_factory=lambda: [32, 64, 128, 256])
    text_dim: int = 100
    text_fc: int = 256
    join_maps: int = 256
    image_size: int = 64
    channels: int = 3

    def __post_init__(self):
        self.conv_maps = list(self.conv_maps)
        _positive(self, "conv_maps", "text_dim", "text_fc", "join_maps", "image_size", "channels")
        if self.image_size % 2 ** len(self.conv_maps):
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by 2^{len(self.conv_maps)} conv stages")

    @property
    def grid(self) -> int:
        return self.image_size // 2 ** len(self.conv_maps)

    @property
    def embedding_dim(self) -> int:
        return self.grid * self.grid * self.join_maps


@dataclass
class AEConfig:
    text_dim: int = 100
    visual_dim: int = 4096
    branch: int = 1000
    hidden: int = 1000
    modality_dropout: float = 0.0

    def __post_init__(self):
        _positive(self, "text_dim", "visual_dim", "branch", "hidden")
        if not 0.0 <= self.modality_dropout < 1.0:
            raise ConfigError(f"modality_dropout must lie in [0, 1), got {self.modality_dropout}")


@dataclass
class BiDNNConfig:
    text_dim: int = 100
    visual_dim: int = 4096
    hidden: int = 1000

    def __post_init__(self):
        _positive(self, "text_dim", "visual_dim", "hidden")


@dataclass
class ModelBundle:
    kind: str
    configs: dict
    params: dict
    bn: dict = field(default_factory=dict)
    seed: int = 0
    epochs: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")

    def require(self, kind: str) -> None:
        if self.kind != kind:
            raise UsageError(f"operation needs a {kind} bundle, got {self.kind}")

    def param_count(self) -> int:
        return sum(p.count() for p in self.params.values())

    def config_dict(self) -> dict:
        return {name: asdict(cfg) for name, cfg in self.configs.items()}

    def digest(self) -> str:
        """Short content hash of all parameters, used as a checkpoint id."""
        h = hashlib.sha1(self.kind.encode())
        for group in sorted(self.params):
            for name, tensor in self.params[group].items():
                h.update(f"{group}.{name}".encode())
                h.update(np.ascontiguousarray(tensor.data).tobytes())
        return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# builders


def generator_specs(cfg: GeneratorConfig) -> list[ParamSpec]:
    start = 2 * cfg.deconv_maps[0]
    specs = [
        ParamSpec("text_fc.weight", (cfg.text_dim, cfg.text_fc)),
        ParamSpec("text_fc.bias", (cfg.text_fc,), "bias"),
        ParamSpec("project.weight", (cfg.noise_dim + cfg.text_fc, 16 * start)),
        ParamSpec("project.bias", (16 * start,), "bias"),
    ]
    c_in = start
    for i, maps in enumerate(cfg.deconv_maps):
        specs += [ParamSpec(f"deconv{i}.kernel", (c_in, maps, 4, 4)),
                  ParamSpec(f"bn{i}.gamma", (maps,), "gamma"),
                  ParamSpec(f"bn{i}.beta", (maps,), "beta")]
        c_in = maps
    specs.append(ParamSpec("out.kernel", (cfg.channels, c_in, 3, 3)))
    return specs


def discriminator_specs(cfg: DiscriminatorConfig) -> list[ParamSpec]:
    specs = []
    c_in = cfg.channels
    for i, maps in enumerate(cfg.conv_maps):
        specs.append(ParamSpec(f"conv{i}.kernel", (maps, c_in, 4, 4)))
        if i > 0:
            specs += [ParamSpec(f"bn{i}.gamma", (maps,), "gamma"), ParamSpec(f"bn{i}.beta", (maps,), "beta")]
        c_in = maps
    specs += [
        ParamSpec("text_fc.weight", (cfg.text_dim, cfg.text_fc)),
        ParamSpec("text_fc.bias", (cfg.text_fc,), "bias"),
        ParamSpec("join.kernel", (cfg.join_maps, c_in + cfg.text_fc, 1, 1)),
        ParamSpec("join_bn.gamma", (cfg.join_maps,), "gamma"),
        ParamSpec("join_bn.beta", (cfg.join_maps,), "beta"),
        ParamSpec("score.weight", (cfg.embedding_dim, 1)),
        ParamSpec("score.bias", (1,), "bias"),
    ]
    return specs


def ae_specs(cfg: AEConfig) -> list[ParamSpec]:
    def fc(name, i, o):
        return [ParamSpec(f"{name}.weight", (i, o)), ParamSpec(f"{name}.bias", (o,), "bias")]

    return (fc("text_in", cfg.text_dim, cfg.branch) + fc("visual_in", cfg.visual_dim, cfg.branch)
            + fc("hidden", 2 * cfg.branch, cfg.hidden)
            + fc("text_branch", cfg.hidden, cfg.branch) + fc("visual_branch", cfg.hidden, cfg.branch)
            + fc("text_out", cfg.branch, cfg.text_dim) + fc("visual_out", cfg.branch, cfg.visual_dim))


def bidnn_specs(cfg: BiDNNConfig) -> list[ParamSpec]:
    h = cfg.hidden
    return [
        ParamSpec("text_in.weight", (cfg.text_dim, h)), ParamSpec("text_in.bias", (h,), "bias"),
        ParamSpec("visual_in.weight", (cfg.visual_dim, h)), ParamSpec("visual_in.bias", (h,), "bias"),
        ParamSpec("central.weight", (h, h)),
        ParamSpec("central_tv.bias", (h,), "bias"), ParamSpec("central_vt.bias", (h,), "bias"),
        ParamSpec("visual_out.weight", (h, cfg.visual_dim)), ParamSpec("visual_out.bias", (cfg.visual_dim,), "bias"),
        ParamSpec("text_out.weight", (h, cfg.text_dim)), ParamSpec("text_out.bias", (cfg.text_dim,), "bias"),
    ]


def build_cgan(gen_cfg: GeneratorConfig | None = None, disc_cfg: DiscriminatorConfig | None = None,
               seed: int = 0) -> ModelBundle:
    gen_cfg = gen_cfg or GeneratorConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig()
    if gen_cfg.image_size != disc_cfg.image_size or gen_cfg.channels != disc_cfg.channels:
        raise ConfigError("generator and discriminator disagree on image geometry")
    if gen_cfg.text_dim != disc_cfg.text_dim:
        raise ConfigError("generator and discriminator disagree on text_dim")
    bn = {f"generator.bn{i}": BNState.create(m) for i, m in enumerate(gen_cfg.deconv_maps)}
    bn.update({f"discriminator.bn{i}": BNState.create(m) for i, m in enumerate(disc_cfg.conv_maps) if i > 0})
    bn["discriminator.join_bn"] = BNState.create(disc_cfg.join_maps)
    return ModelBundle(
        kind="cgan",
        configs={"generator": gen_cfg, "discriminator": disc_cfg},
        params={"generator": init_params(generator_specs(gen_cfg), seed),
                "discriminator": init_params(discriminator_specs(disc_cfg), seed + 1)},
        bn=bn, seed=seed)


def build_ae(cfg: AEConfig | None = None, seed: int = 0) -> ModelBundle:
    cfg = cfg or AEConfig()
    return ModelBundle("ae", {"ae": cfg}, {"ae": init_params(ae_specs(cfg), seed)}, seed=seed)


def build_bidnn(cfg: BiDNNConfig | None = None, seed: int = 0) -> ModelBundle:
    cfg = cfg or BiDNNConfig()
    return ModelBundle("bidnn", {"bidnn": cfg}, {"bidnn": init_params(bidnn_specs(cfg), seed)}, seed=seed)


def build(kind: str, configs: dict, seed: int = 0) -> ModelBundle:
    if kind == "cgan":
        return build_cgan(configs.get("generator"), configs.get("discriminator"), seed)
    if kind == "ae":
        return build_ae(configs.get("ae"), seed)
    if kind == "bidnn":
        return build_bidnn(configs.get("bidnn"), seed)
    raise ConfigError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# forward passes


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_mode(mode):
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def _check_2d(x: Tensor, width: int, what: str):
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"{what} must be N×{width}, got {x.shape}")


def generator_forward(bundle: ModelBundle, z, phi, mode: str = "train", update_stats: bool = True) -> Tensor:
    bundle.require("cgan")
    _check_mode(mode)
    cfg: GeneratorConfig = bundle.configs["generator"]
    p: ParamSet = bundle.params["generator"]
    z, phi = _tensor(z), _tensor(phi)
    _check_2d(z, cfg.noise_dim, "noise z")
    _check_2d(phi, cfg.text_dim, "text embedding phi")
    if z.shape[0] != phi.shape[0]:
        raise DimensionError(f"noise batch {z.shape[0]} differs from text batch {phi.shape[0]}")
    if np.abs(z.data).max(initial=0.0) > 1.0:
        raise InputError("noise values must lie in [-1, 1]")

    text = leaky_relu(dense(phi, p["text_fc.weight"], p["text_fc.bias"]))
    h = dense(concat([z, text], axis=1), p["project.weight"], p["project.bias"])
    h = reshape(h, (z.shape[0], 2 * cfg.deconv_maps[0], 4, 4))
    for i in range(len(cfg.deconv_maps)):
        h = deconv2d(h, p[f"deconv{i}.kernel"], stride=2, padding=1)
        h = batchnorm(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], mode, bundle.bn[f"generator.bn{i}"], update_stats)
        h = leaky_relu(h)
    return tanh(conv2d(h, p["out.kernel"], stride=1, padding=1))


def discriminator_forward(bundle: ModelBundle, image, phi, mode: str = "train",
                          update_stats: bool = True) -> tuple[Tensor, Tensor]:
    """Return ``(score, embedding)``; the embedding is the raw join-conv output, flattened."""
    bundle.require("cgan")
    _check_mode(mode)
    cfg: DiscriminatorConfig = bundle.configs["discriminator"]
    p: ParamSet = bundle.params["discriminator"]
    image, phi = _tensor(image), _tensor(phi)
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if image.ndim != 4 or image.shape[1:] != expected:
        raise DimensionError(f"image batch must be N×{'×'.join(map(str, expected))}, got {image.shape}")
    _check_2d(phi, cfg.text_dim, "text embedding phi")
    if image.shape[0] != phi.shape[0]:
        raise DimensionError(f"image batch {image.shape[0]} differs from text batch {phi.shape[0]}")

    h = image
    for i in range(len(cfg.conv_maps)):
        h = conv2d(h, p[f"conv{i}.kernel"], stride=2, padding=1)
        if i > 0:
            h = batchnorm(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], mode, bundle.bn[f"discriminator.bn{i}"],
                          update_stats)
        h = leaky_relu(h)
    text = leaky_relu(dense(phi, p["text_fc.weight"], p["text_fc.bias"]))
    joined = conv2d(concat([h, tile_spatial(text, cfg.grid)], axis=1), p["join.kernel"])
    embedding = flatten(joined)
    h = batchnorm(joined, p["join_bn.gamma"], p["join_bn.beta"], mode, bundle.bn["discriminator.join_bn"],
                  update_stats)
    h = flatten(leaky_relu(h))
    score = sigmoid(dense(h, p["score.weight"], p["score.bias"]))
    return reshape(score, (image.shape[0],)), embedding


def ae_forward(bundle: ModelBundle, text, visual) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(text_rec, visual_rec, embedding)``."""
    bundle.require("ae")
    cfg: AEConfig = bundle.configs["ae"]
    p: ParamSet = bundle.params["ae"]
    text, visual = _tensor(text), _tensor(visual)
    _check_2d(text, cfg.text_dim, "text input")
    _check_2d(visual, cfg.visual_dim, "visual input")
    if text.shape[0] != visual.shape[0]:
        raise DimensionError(f"text batch {text.shape[0]} differs from visual batch {visual.shape[0]}")

    def fc(x, name):
        return dense(x, p[f"{name}.weight"], p[f"{name}.bias"])

    t = leaky_relu(fc(text, "text_in"))
    v = leaky_relu(fc(visual, "visual_in"))
    embedding = tanh(fc(concat([t, v], axis=1), "hidden"))
    text_rec = fc(leaky_relu(fc(embedding, "text_branch")), "text_out")
    visual_rec = fc(leaky_relu(fc(embedding, "visual_branch")), "visual_out")
    return text_rec, visual_rec, embedding


PRESENCE = ("both", "text_only", "visual_only")


def bidnn_forward(bundle: ModelBundle, text=None, visual=None,
                  present: str = "both") -> tuple[dict, Tensor]:
    """Return ``(translations, embedding)``.

    ``translations`` maps ``"text_to_visual"`` / ``"visual_to_text"`` to the
    predicted other modality for each direction that has its input. The
    embedding concatenates the text-side and visual-side central activations,
    with zeros standing in for a missing modality.
    """
    bundle.require("bidnn")
    if present not in PRESENCE:
        raise ConfigError(f"present must be one of {PRESENCE}, got {present!r}")
    use_text = present in ("both", "text_only")
    use_visual = present in ("both", "visual_only")
    if (use_text and text is None) or (use_visual and visual is None):
        raise InputError(f"present={present!r} but a required modality is missing")
    cfg: BiDNNConfig = bundle.configs["bidnn"]
    p: ParamSet = bundle.params["bidnn"]
    central = p["central.weight"]
    translations = {}
    halves = []
    n = None
    if use_text:
        text = _tensor(text)
        _check_2d(text, cfg.text_dim, "text input")
        n = text.shape[0]
        a = tanh(dense(text, p["text_in.weight"], p["text_in.bias"]))
        c_text = tanh(dense(a, central, p["central_tv.bias"]))
        translations["text_to_visual"] = dense(c_text, p["visual_out.weight"], p["visual_out.bias"])
    if use_visual:
        visual = _tensor(visual)
        _check_2d(visual, cfg.visual_dim, "visual input")
        if n is not None and visual.shape[0] != n:
            raise DimensionError(f"text batch {n} differs from visual batch {visual.shape[0]}")
        n = visual.shape[0]
        a = tanh(dense(visual, p["visual_in.weight"], p["visual_in.bias"]))
        c_visual = tanh(dense(a, transpose(central), p["central_vt.bias"]))
        translations["visual_to_text"] = dense(c_visual, p["text_out.weight"], p["text_out.bias"])
    zeros = Tensor(np.zeros((n, cfg.hidden), dtype=get_dtype()))
    halves = [c_text if use_text else zeros, c_visual if use_visual else zeros]
    return translations, concat(halves, axis=1)


def bidnn_central_pair(bundle: ModelBundle) -> tuple[np.ndarray, np.ndarray]:
    """The central matrix as used text->visual and visual->text (a transposed view)."""
    bundle.require("bidnn")
    w = bundle.params["bidnn"]["central.weight"].data
    return w, w.T
