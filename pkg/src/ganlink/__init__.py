"""Joint text/image embeddings for video hyperlinking with a conditional GAN.

The discriminator of a text-conditioned GAN doubles as a multimodal encoder:
its joint text/visual feature map is used as the segment embedding and
ranked by cosine distance. Autoencoder and BiDNN baselines, the evaluation
protocol and crossmodal visualizations live alongside it.
"""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, DataError, DimensionError, GanlinkError, InputError,
                     LookupFailure, MagicError, NonFiniteError, TruncationError, UsageError, VersionError)
from .tensor import Tape, Tensor, backward, finite_diff_check, precision, set_precision
from .nn import OptimConfig, ParamSet, adam_step, init_params
from .models import (AEConfig, BiDNNConfig, DiscriminatorConfig, GeneratorConfig, ModelBundle, build,
                     build_ae, build_bidnn, build_cgan)
from .data import Dataset, Segment, SyntheticSpec, Vocabulary, generate_synthetic_dataset, load_dataset
from .training import TrainConfig, TrainLog, train, train_ae, train_bidnn, train_cgan
from .retrieval import EmbeddingMatrix, embed_corpus, evaluate, one_sided_t_test, rank_targets
from .io import load_checkpoint, save_checkpoint
from .viz import invert_generator, nearest_words, render_text_to_images

__all__ = [name for name in dir() if not name.startswith("_")]
