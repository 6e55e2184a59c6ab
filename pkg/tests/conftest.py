import pytest
import torch

from refexec.data import CorpusConfig, SplitSpec, build_corpus, split_corpus
from refexec.language import build_lexicon
from refexec.scene import SceneConfig, generate_scene
from refexec.vocab import Vocabulary

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary()


@pytest.fixture(scope="session")
def lexicon(vocab):
    return build_lexicon(vocab)


@pytest.fixture(scope="session")
def scene10():
    return generate_scene(SceneConfig(n_objects=10), seed=7)


@pytest.fixture(scope="session")
def scenes_small():
    config = SceneConfig(n_objects=10)
    return {seed: generate_scene(config, seed) for seed in range(3, 9)}


@pytest.fixture(scope="session")
def tiny_corpus():
    """Shared 40-scene corpus; tests must not mutate it."""
    return build_corpus(CorpusConfig(n_scenes=40, instances_per_scene=6, seed=11))


@pytest.fixture(scope="session")
def tiny_splits(tiny_corpus):
    return split_corpus(tiny_corpus, SplitSpec("iid", seed=0))
