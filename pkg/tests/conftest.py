import time

import numpy as np
import pytest

from ganlink.data import SyntheticSpec, generate_synthetic_dataset
from ganlink.models import AEConfig, BiDNNConfig, DiscriminatorConfig, GeneratorConfig
from ganlink.retrieval import embed_corpus
from ganlink.tensor import precision
from ganlink.training import TrainConfig, train_ae, train_bidnn, train_cgan


@pytest.fixture
def high():
    """64-bit mode for finite-difference checks."""
    with precision("high"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# synthetic benchmark runs, trained once per session and shared

SYNTH_SEEDS = (1, 2, 3)
SYNTH_EPOCHS = 200
SYNTH_GEN = GeneratorConfig(text_dim=32, text_fc=64, deconv_maps=[32, 16], image_size=16)
SYNTH_DISC = DiscriminatorConfig(text_dim=32, text_fc=64, conv_maps=[16, 32], join_maps=32, image_size=16)


class SyntheticRuns:
    def __init__(self):
        self._cache = {}
        self.seconds = 0.0

    def get(self, seed):
        if seed not in self._cache:
            self._cache[seed] = self._train(seed)
        return self._cache[seed]

    def _train(self, seed):
        start = time.perf_counter()
        ds, truth, vocab = generate_synthetic_dataset(SyntheticSpec(seed=seed))
        visual_dim = ds[0].visual_feature.size
        cgan, cgan_log = train_cgan(ds, SYNTH_GEN, SYNTH_DISC, TrainConfig(epochs=SYNTH_EPOCHS, seed=seed))
        cfg = TrainConfig(epochs=SYNTH_EPOCHS, seed=seed)
        ae, _ = train_ae(ds, AEConfig(text_dim=32, visual_dim=visual_dim), cfg)
        bidnn, _ = train_bidnn(ds, BiDNNConfig(text_dim=32, visual_dim=visual_dim), cfg)
        self.seconds += time.perf_counter() - start
        return {
            "dataset": ds, "truth": truth, "vocab": vocab,
            "cgan": cgan, "cgan_log": cgan_log,
            "embeddings": {b.kind: embed_corpus(b, ds) for b in (cgan, ae, bidnn)},
        }


@pytest.fixture(scope="session")
def synthetic_runs():
    return SyntheticRuns()


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance criterion; the verdict follows the test outcome."""
    entry = {"name": request.node.get_closest_marker("criterion").args[0], "detail": ""}
    _CRITERIA[request.node.nodeid] = entry
    return entry


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _CRITERIA.get(item.nodeid)
    if entry is not None and rep.when == "call":
        entry["passed"] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _CRITERIA.values():
        verdict = "PASS" if entry.get("passed") else "FAIL"
        line = f"{verdict}  {entry['name']}"
        if entry["detail"]:
            line += f"  [{entry['detail']}]"
        terminalreporter.write_line(line)
