import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edas.annotators import POOL_ORDER, TrainingConfig, build_model, train
from edas.cli import derive_seed
from edas.corpus import SynthConfig, default_inventory, generate_synthetic, split_corpus
from edas.encoder import PseudoEmbeddings

# Golden desk-scale configuration: fixed once from exploratory runs.
GOLDEN_SEED = 1
GOLDEN_DIALOGUES = 60
GOLDEN_DIM = 32
GOLDEN_HIDDEN = 16
GOLDEN_EPOCHS = 50
GOLDEN_LR = 0.1
GOLDEN_TEST_FRACTION = 0.25


def golden_corpus(context_rule: bool):
    return generate_synthetic(SynthConfig(n_classes=5, n_dialogues=GOLDEN_DIALOGUES,
                                          context_rule=context_rule, seed=GOLDEN_SEED))


def train_pool(corpus, seed=GOLDEN_SEED):
    provider = PseudoEmbeddings(GOLDEN_DIM, derive_seed(seed, 99))
    models, histories = {}, {}
    for i, kind in enumerate(POOL_ORDER):
        model = build_model(kind, corpus.inventory, provider, hidden=GOLDEN_HIDDEN, seed=derive_seed(seed, i, 0))
        models[kind], histories[kind] = train(
            model, corpus, TrainingConfig(GOLDEN_EPOCHS, GOLDEN_LR, derive_seed(seed, i, 1)))
    return models, histories


class Pool:
    def __init__(self, context_rule: bool):
        self.corpus = golden_corpus(context_rule)
        self.train, self.test = split_corpus(self.corpus, GOLDEN_TEST_FRACTION, GOLDEN_SEED)
        t0 = time.perf_counter()
        self.models, self.histories = train_pool(self.train)
        self.train_seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def context_pool():
    return Pool(context_rule=True)


@pytest.fixture(scope="session")
def separable_pool():
    return Pool(context_rule=False)


@pytest.fixture
def inventory():
    return default_inventory()
