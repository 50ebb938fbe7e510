import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def blobs(rng):
    """Two well separated 2-D Gaussian blobs, 50 rows each"""
    from seqalign.types import LabeledSet

    x = np.vstack(
        [
            rng.normal((-5.0, -5.0), 0.5, size=(50, 2)),
            rng.normal((5.0, 5.0), 0.5, size=(50, 2)),
        ]
    )
    labels = np.array(['A'] * 50 + ['B'] * 50, dtype=object)
    return LabeledSet(coords=x, labels=labels)


@pytest.fixture
def class_swap():
    from seqalign.data import generate_synthetic
    from seqalign.types import Preset, SynthConfig

    return generate_synthetic(SynthConfig(preset=Preset.CLASS_SWAP, steps=2))


@pytest.fixture
def corpus_files(tmp_path, class_swap):
    from seqalign.data import write_corpus

    data_path, manifest_path = tmp_path / 'corpus.csv', tmp_path / 'manifest.toml'
    write_corpus(class_swap, data_path, manifest_path)
    return data_path, manifest_path
