"""Command line interface.

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (SyntheticSpec, Vocabulary, average_word_embeddings, generate_synthetic_dataset, load_dataset,
                   preprocess_image, read_groundtruth, read_image, write_dataset, write_groundtruth)
from .errors import CheckpointError, ConfigError, DataError, InputError, UsageError
from .io import load_checkpoint, read_embeddings, read_mmte, save_checkpoint, write_embeddings
from .models import AEConfig, BiDNNConfig, DiscriminatorConfig, GeneratorConfig
from .nn import OptimConfig
from .retrieval import (EmbeddingMatrix, embed_corpus, evaluate, format_table, one_sided_t_test, rank_targets,
                        write_report_csv)
from .training import TrainConfig, train
from .viz import (DEFAULT_TOP_WORDS, invert_generator, nearest_words, render_text_to_images, slice_text_part,
                  write_image)

log = logging.getLogger("ganlink")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

_MODEL_TYPES = {
    "cgan": {"generator": GeneratorConfig, "discriminator": DiscriminatorConfig},
    "ae": {"ae": AEConfig},
    "bidnn": {"bidnn": BiDNNConfig},
}
_TRAIN_KEYS = {"epochs", "batch_size", "gen_updates_per_disc", "seed"}
_OPTIM_KEYS = {f.name for f in dataclasses.fields(OptimConfig)}


def parse_flat_config(kind: str, flat: dict, defaults: dict | None = None) -> tuple[dict, TrainConfig]:
    """Split a flat key/value mapping into model configs and a TrainConfig.

    Keys shared by several config types (``text_dim`` for both GAN networks)
    apply to all of them. Unknown keys are rejected.
    """
    if kind not in _MODEL_TYPES:
        raise ConfigError(f"unknown model kind {kind!r}")
    if not isinstance(flat, dict):
        raise ConfigError("config must be a JSON object")
    types = _MODEL_TYPES[kind]
    model_keys = {f.name for cls in types.values() for f in dataclasses.fields(cls)}
    unknown = set(flat) - model_keys - _TRAIN_KEYS - _OPTIM_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys for {kind}: {', '.join(sorted(unknown))}")
    merged = dict(defaults or {})
    merged.update(flat)
    try:
        configs = {}
        for group, cls in types.items():
            names = {f.name for f in dataclasses.fields(cls)}
            configs[group] = cls(**{k: v for k, v in merged.items() if k in names})
        optim = OptimConfig(**{k: v for k, v in flat.items() if k in _OPTIM_KEYS})
        train_cfg = TrainConfig(optimizer=optim, **{k: v for k, v in flat.items() if k in _TRAIN_KEYS})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return configs, train_cfg


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _load_vocab(path):
    return Vocabulary.load(path) if path else None


def _image_size(bundle) -> int:
    return bundle.configs["generator"].image_size if bundle.kind == "cgan" else 64


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    from .plotting import plot_training_log

    flat = _read_config(args.config)
    if args.epochs is not None:
        flat["epochs"] = args.epochs
    if args.seed is not None:
        flat["seed"] = args.seed
    image_size = int(flat.get("image_size", 64))
    dataset = load_dataset(args.data, _load_vocab(args.vocab), image_size=image_size)
    defaults = {"text_dim": int(dataset[0].phi.shape[0]), "image_size": image_size}
    if dataset[0].visual_feature is not None:
        defaults["visual_dim"] = int(dataset[0].visual_feature.shape[0])
    configs, train_cfg = parse_flat_config(args.model, flat, defaults)

    def progress(epoch, train_log):
        log.info("epoch %d/%d  loss %.4f", epoch + 1, train_cfg.epochs, train_log.epoch_d_loss[-1])

    bundle, train_log = train(args.model, dataset, configs, train_cfg, progress)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(bundle, out)
    stem = out.with_suffix("")
    train_log.to_csv(f"{stem}.log.csv")
    plot_training_log(train_log, f"{stem}.loss.png", title=args.model)
    print(f"wrote {out} ({len(train_log.records)} log rows)")
    return EXIT_OK


def cmd_embed(args) -> int:
    bundle = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, _load_vocab(args.vocab), image_size=_image_size(bundle))
    matrix = embed_corpus(bundle, dataset)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(args.out, matrix.ids, matrix.matrix)
    print(f"wrote {len(matrix)} embeddings of dimension {matrix.dim} to {args.out}")
    return EXIT_OK


def _load_matrix(path, source=None) -> EmbeddingMatrix:
    ids, matrix = read_embeddings(path)
    return EmbeddingMatrix(ids, matrix, source or Path(path).stem)


def cmd_rank(args) -> int:
    emb = _load_matrix(args.embeddings)
    for rank, (seg_id, dist) in enumerate(rank_targets(args.anchor, emb, args.k), 1):
        print(f"{rank}\t{seg_id}\t{dist:.6f}")
    return EXIT_OK


def _collect_runs(args) -> dict[str, list[EmbeddingMatrix]]:
    if args.embeddings:
        emb = _load_matrix(args.embeddings)
        return {emb.source: [emb]}
    root = Path(args.runs)
    if not root.is_dir():
        raise DataError(f"runs directory {root} does not exist")
    methods = {}
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    groups = [(d.name, d) for d in subdirs] or [(root.name, root)]
    for label, directory in groups:
        files = sorted(directory.glob("*.mmte"))
        if files:
            methods[label] = [_load_matrix(f, label) for f in files]
    if not methods:
        raise DataError(f"no .mmte embedding files under {root}")
    return methods


def cmd_evaluate(args) -> int:
    from .plotting import plot_report

    truth = read_groundtruth(args.groundtruth)
    methods = _collect_runs(args)
    reports = [evaluate(runs, truth, args.k, label) for label, runs in methods.items()]
    print(format_table(reports, args.k))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_csv(out, reports)
    plot_report(reports, out.with_suffix(".png"))
    if args.compare:
        names = [s.strip() for s in args.compare.split(",")]
        if len(names) != 2:
            raise ConfigError("--compare expects two comma-separated labels")
        by_label = {r.label: r for r in reports}
        for name in names:
            if name not in by_label:
                raise ConfigError(f"--compare label {name!r} not among {sorted(by_label)}")
        a, b = (by_label[n].run_means for n in names)
        res = one_sided_t_test(a, b)
        print(f"t-test {names[0]} > {names[1]}: t={res.t:.4f} dof={res.dof:.2f} p={res.p:.4f}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .plotting import plot_images

    bundle = load_checkpoint(args.ckpt)
    if args.phi:
        phi = read_mmte(args.phi).reshape(-1)
        source = str(args.phi)
    elif args.words:
        if not args.vocab:
            raise ConfigError("--words needs --vocab")
        words = [w for w in args.words.replace(",", " ").split() if w]
        phi, coverage = average_word_embeddings(words, Vocabulary.load(args.vocab))
        if coverage == 0:
            raise InputError("none of the given words are in the vocabulary")
        source = "words:" + " ".join(words)
    else:
        raise ConfigError("give --phi or --words")
    images = render_text_to_images(bundle, phi, args.n, args.seed, phi_source=source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, img in enumerate(images):
        name = f"image_{i:03d}.ppm"
        write_image(img, out / name)
        records.append({"file": name, **img.provenance})
    (out / "provenance.json").write_text(json.dumps(records, indent=2), encoding="utf-8")
    plot_images(images, out / "grid.png")
    print(f"wrote {len(images)} images to {out}")
    return EXIT_OK


def cmd_invert(args) -> int:
    from .plotting import plot_word_ranking

    bundle = load_checkpoint(args.ckpt)
    bundle.require("cgan")
    cfg = bundle.configs["generator"]
    path = Path(args.image)
    if path.suffix.lower() == ".mmte":
        image = read_mmte(path).astype(np.float64)
    else:
        image = preprocess_image(read_image(path), cfg.image_size)
    vocab = Vocabulary.load(args.vocab)
    phi = slice_text_part(invert_generator(bundle, image), cfg.text_dim, cfg.noise_dim)
    k = min(args.top, len(vocab))
    ranking = nearest_words(phi, vocab, k)
    for word, sim in ranking.entries:
        print(f"{word}\t{sim:.6f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        ranking.to_tsv(args.out)
        plot_word_ranking(ranking, Path(args.out).with_suffix(".png"), image)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(classes=args.classes, segments_per_class=args.per_class, image_size=args.image_size,
                         text_dim=args.text_dim, text_noise=args.text_noise, pixel_noise=args.pixel_noise,
                         seed=args.seed)
    dataset, truth, vocab = generate_synthetic_dataset(spec)
    out = Path(args.out)
    manifest = write_dataset(dataset, out)
    write_groundtruth(out / "groundtruth.tsv", truth)
    vocab.save(out / "vocab.txt")
    print(f"wrote {len(dataset)} segments to {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ganlink", description="GAN-based multimodal embeddings for video hyperlinking")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a cgan, ae or bidnn model")
    p.add_argument("--model", choices=sorted(_MODEL_TYPES), required=True)
    p.add_argument("--data", required=True, help="segment manifest (JSON lines)")
    p.add_argument("--config", help="flat JSON config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--vocab", help="word vectors, needed when the manifest lists words")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a corpus with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True, help="MMTE output; ids go to <out>.ids")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("rank", help="rank targets for one anchor")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--anchor", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", help="precision@k over anchors, mean and σ over runs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--embeddings")
    src.add_argument("--runs", help="directory of runs, one subdirectory per representation")
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default="evaluation.csv")
    p.add_argument("--compare", help="two labels a,b: one-sided t-test of a > b over run means")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="render images for a text embedding")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--phi", help="MMTE text embedding")
    p.add_argument("--words", help="comma or space separated words")
    p.add_argument("--vocab")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("invert", help="top words for an image through the inverted generator")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="PPM/PNG image or MMTE C×H×W tensor in [-1, 1]")
    p.add_argument("--vocab", required=True)
    p.add_argument("--top", type=int, default=DEFAULT_TOP_WORDS)
    p.add_argument("--out", help="optional TSV of (word, similarity)")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("synth", help="write the synthetic paired-modality corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--text-dim", type=int, default=32)
    p.add_argument("--text-noise", type=float, default=SyntheticSpec.text_noise)
    p.add_argument("--pixel-noise", type=float, default=SyntheticSpec.pixel_noise)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InputError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, Exception) as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
