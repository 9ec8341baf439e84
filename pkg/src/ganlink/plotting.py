"""Matplotlib figures written next to the CLI's CSV/TSV outputs."""

import numpy as np
import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def figsize(scale=1.0, ratio=None):
    width = 6.0 * scale
    if ratio is None:
        ratio = (np.sqrt(5.0) - 1.0) / 2.0
    return width, width * ratio


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_report(reports, path):
    """Bar chart of P@K per representation with σ error bars where defined."""
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.9))
        labels = [r.label for r in reports]
        means = [100 * r.mean for r in reports]
        errs = [0.0 if r.std is None else 100 * r.std for r in reports]
        ax.bar(range(len(reports)), means, yerr=errs, capsize=4, color="0.6", edgecolor="0.2")
        ax.set_xticks(range(len(reports)))
        ax.set_xticklabels(labels, rotation=20, ha="right")
        k = reports[0].k if reports else 10
        ax.set_ylabel(f"P@{k} (%)")
        ax.set_ylim(0, 100)
        for i, m in enumerate(means):
            ax.text(i, m + 1.5, f"{m:.2f}", ha="center", va="bottom", fontsize=7)
        return _save(fig, path)


def plot_training_log(log, path, title=None):
    with mpl.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.9))
        epochs = np.arange(1, len(log.epoch_d_loss) + 1)
        has_g = bool(log.epoch_g_loss)
        ax.plot(epochs, log.epoch_d_loss, label="discriminator" if has_g else "reconstruction")
        if has_g:
            ax.plot(epochs, log.epoch_g_loss, label="generator")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_images(images, path, titles=None, ncols=4):
    """Grid of C×H×W images with values in [-1, 1]."""
    images = [np.asarray(getattr(im, "pixels", im)) for im in images]
    n = len(images)
    ncols = max(1, min(ncols, n))
    nrows = (n + ncols - 1) // ncols
    with mpl.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(1.6 * ncols, 1.6 * nrows), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        for i, img in enumerate(images):
            ax = axes.ravel()[i]
            ax.imshow(np.clip((img.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0), interpolation="nearest")
            if titles:
                ax.set_title(titles[i], fontsize=7)
        return _save(fig, path)


def plot_word_ranking(ranking, path, image=None):
    entries = list(ranking.entries)
    with mpl.rc_context(STYLE):
        if image is not None:
            fig, (ax_img, ax) = plt.subplots(1, 2, figsize=figsize(1.0, 0.5),
                                             gridspec_kw={"width_ratios": [1, 2]})
            ax_img.imshow(np.clip((np.asarray(image).transpose(1, 2, 0) + 1.0) / 2.0, 0, 1),
                          interpolation="nearest")
            ax_img.axis("off")
        else:
            fig, ax = plt.subplots(figsize=figsize(0.8))
        words = [w for w, _ in entries][::-1]
        sims = [s for _, s in entries][::-1]
        ax.barh(range(len(words)), sims, color="0.6", edgecolor="0.2")
        ax.set_yticks(range(len(words)))
        ax.set_yticklabels(words)
        ax.set_xlabel("cosine similarity")
        return _save(fig, path)
