import pytest
from pathlib import Path

import matplotlib

from fontmanifold.ingest import load_glyph
from fontmanifold.synthetic import make_desk_corpus
from fontmanifold.vae import TrainConfig, train


MPL_FONTS = Path(matplotlib.get_data_path()) / "fonts" / "ttf"


@pytest.fixture(scope="session")
def mpl_fonts_dir() -> Path:
    return MPL_FONTS


@pytest.fixture(scope="session")
def dejavu_bytes() -> bytes:
    return (MPL_FONTS / "DejaVuSans.ttf").read_bytes()


@pytest.fixture(scope="session")
def stix_nonuni_bytes() -> bytes:
    # Symbol-only font: no Latin capitals in its cmap.
    return (MPL_FONTS / "STIXNonUni.ttf").read_bytes()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """48 synthetic glyph bitmaps, enough for fast unit-level training."""
    root = tmp_path_factory.mktemp("small-corpus")
    return make_desk_corpus(root, count=48, seed=11)


@pytest.fixture(scope="session")
def small_bitmaps(small_corpus):
    return [load_glyph(small_corpus, e) for e in small_corpus.ok_entries()]


@pytest.fixture(scope="session")
def tiny_model(small_corpus):
    """Briefly trained model shared by study/service tests."""
    return train(small_corpus, TrainConfig(epochs=3, batch_size=16, seed=5))
