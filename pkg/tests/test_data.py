import math

import numpy as np
import pytest

from seqalign import errors
from seqalign.data import (
    corpus_digest,
    describe,
    generate_synthetic,
    header,
    read_corpus,
    read_manifest,
    render_data,
    split_corpus,
    synthetic_means,
    write_corpus,
)
from seqalign.types import Corpus, Manifest, Preset, Split

from .factories import EmbeddingRecordFactory, SynthConfigFactory


@pytest.fixture
def manifest_path(tmp_path):
    path = tmp_path / 'manifest.toml'
    path.write_text(
        'dimension = 2\nlabels = ["accept", "reject"]\n\n'
        '[steps]\n0 = "2019"\n1 = "2020"\n'
    )
    return path


def _write(tmp_path, *rows, first='id,step,split,label,e0,e1'):
    path = tmp_path / 'corpus.csv'
    path.write_text('\n'.join([first, *rows]) + '\n')
    return path


def _corpus(records, steps=(0,), labels=('accept', 'reject')):
    manifest = Manifest(
        dimension=len(records[0].vector),
        steps={step: f't{step}' for step in steps},
        labels=list(labels),
    )
    return Corpus(records=records, manifest=manifest)


def test_header():
    assert header(3) == ['id', 'step', 'split', 'label', 'e0', 'e1', 'e2']


def test_read_manifest(manifest_path):
    manifest = read_manifest(manifest_path)

    assert manifest.dimension == 2
    assert manifest.steps == {0: '2019', 1: '2020'}
    assert manifest.labels == ['accept', 'reject']


def test_read_manifest_errors(tmp_path):
    missing = tmp_path / 'missing.toml'
    missing.write_text('dimension = 2\n')
    with pytest.raises(errors.MalformedManifest):
        read_manifest(missing)

    broken = tmp_path / 'broken.toml'
    broken.write_text('dimension = = 2\n')
    with pytest.raises(errors.MalformedManifest):
        read_manifest(broken)


def test_read_corpus(tmp_path, manifest_path):
    data_path = _write(
        tmp_path, 'a,0,train,accept,0.5,-1', 'b,1,test,,2,3.25', 'c,1,dev,reject,0,0'
    )

    corpus = read_corpus(data_path, manifest_path)

    assert [record.id for record in corpus.records] == ['a', 'b', 'c']
    first, second, _ = corpus.records
    assert first.step == 0
    assert first.split is Split.TRAIN
    assert first.label == 'accept'
    np.testing.assert_array_equal(first.vector, [0.5, -1.0])
    assert second.label is None
    assert second.split is Split.TEST


@pytest.mark.parametrize(
    'rows, error',
    [
        (['a,0,train,accept,0.5'], errors.RaggedRow),
        (['a,0,train,accept,0.5,x'], errors.RaggedRow),
        (['a,0,holdout,accept,0.5,1'], errors.RaggedRow),
        (['a,7,train,accept,0.5,1'], errors.UnknownStep),
        (['a,0,train,maybe,0.5,1'], errors.UnknownLabel),
        (['a,0,train,accept,0.5,1', 'a,1,train,reject,0,0'], errors.DuplicateId),
    ],
)
def test_read_corpus_errors(tmp_path, manifest_path, rows, error):
    with pytest.raises(error):
        read_corpus(_write(tmp_path, *rows), manifest_path)


def test_read_corpus_header_mismatch(tmp_path, manifest_path):
    data_path = _write(
        tmp_path, 'a,0,train,accept,1,2,3', first='id,step,split,label,e0,e1,e2'
    )

    with pytest.raises(errors.MalformedHeader):
        read_corpus(data_path, manifest_path)


def test_corpus_roundtrip(tmp_path):
    corpus = generate_synthetic(SynthConfigFactory(per_class=5, steps=2))
    data_path, manifest_path = tmp_path / 'corpus.csv', tmp_path / 'manifest.toml'

    write_corpus(corpus, data_path, manifest_path)
    loaded = read_corpus(data_path, manifest_path)

    assert render_data(loaded) == render_data(corpus)
    assert loaded.manifest == corpus.manifest
    for before, after in zip(corpus.records, loaded.records):
        np.testing.assert_array_equal(before.vector, after.vector)
    assert corpus_digest(loaded) == corpus_digest(corpus)


def test_corpus_digest_changes_with_content():
    records = EmbeddingRecordFactory.build_batch(4)
    corpus = _corpus(records)

    before = corpus_digest(corpus)
    records[0].label = 'reject'

    assert corpus_digest(corpus) != before


def test_split_counts():
    records = EmbeddingRecordFactory.build_batch(20)
    corpus = split_corpus(_corpus(records), rng_seed=3)

    for label in ('accept', 'reject'):
        splits = [record.split for record in corpus.records if record.label == label]
        assert splits.count(Split.TRAIN) == 8
        assert splits.count(Split.DEV) == 1
        assert splits.count(Split.TEST) == 1
    assert [record.id for record in corpus.records] == [record.id for record in records]


def test_split_small_stratum_goes_to_train():
    records = EmbeddingRecordFactory.build_batch(6)

    corpus = split_corpus(_corpus(records))

    assert {record.split for record in corpus.records} == {Split.TRAIN}


def test_split_stratifies_by_step():
    records = [
        *EmbeddingRecordFactory.build_batch(10, step=0, label='accept'),
        *EmbeddingRecordFactory.build_batch(20, step=1, label='accept'),
    ]

    corpus = split_corpus(_corpus(records, steps=(0, 1)), (0.5, 0.25, 0.25))

    for step, expected in ((0, (6, 2, 2)), (1, (10, 5, 5))):
        splits = [record.split for record in corpus.records if record.step == step]
        assert (
            splits.count(Split.TRAIN),
            splits.count(Split.DEV),
            splits.count(Split.TEST),
        ) == expected


def test_split_is_deterministic():
    records = EmbeddingRecordFactory.build_batch(40)

    first = split_corpus(_corpus(records), rng_seed=1)
    second = split_corpus(_corpus(records), rng_seed=1)

    assert [r.split for r in first.records] == [r.split for r in second.records]


def test_split_errors():
    records = EmbeddingRecordFactory.build_batch(4)

    with pytest.raises(errors.InvalidFractions):
        split_corpus(_corpus(records), (0.5, 0.5, 0.5))

    with pytest.raises(errors.InvalidFractions):
        split_corpus(_corpus(records), (1.2, -0.1, -0.1))

    with pytest.raises(errors.EmptyStep):
        split_corpus(_corpus(records, steps=(0, 1)))


def test_synthetic_shape():
    config = SynthConfigFactory(per_class=7, steps=3, classes=3)

    corpus = generate_synthetic(config)

    assert len(corpus.records) == 7 * 3 * 3
    assert corpus.manifest.steps == {0: 't0', 1: 't1', 2: 't2'}
    assert corpus.manifest.labels == ['c0', 'c1', 'c2']
    assert corpus.records[0].id == 's0_0_0'
    assert all(record.vector.shape == (8,) for record in corpus.records)


def test_synthetic_is_deterministic():
    config = SynthConfigFactory(preset=Preset.IRREGULAR)

    assert render_data(generate_synthetic(config)) == render_data(
        generate_synthetic(config)
    )


@pytest.mark.parametrize('preset', list(Preset))
def test_synthetic_class_separation(preset):
    config = SynthConfigFactory(preset=preset, separation=6.0, noise=2.0)

    means = synthetic_means(config)

    assert means.shape == (3, 2, 8)
    assert np.linalg.norm(means[0, 0] - means[0, 1]) == pytest.approx(12.0)


@pytest.mark.parametrize(
    'preset', [Preset.GLOBAL_SHIFT, Preset.GRADUAL_ROTATION, Preset.IRREGULAR]
)
def test_synthetic_without_drift(preset):
    config = SynthConfigFactory(preset=preset, drift=0.0, per_class=400)

    means = synthetic_means(config)
    corpus = generate_synthetic(config)

    for step in range(config.steps):
        np.testing.assert_array_equal(means[step], means[0])
        for c in range(config.classes):
            vectors = np.vstack(
                [
                    record.vector
                    for record in corpus.records
                    if record.step == step and record.label == f'c{c}'
                ]
            )
            bound = 4 * config.noise / math.sqrt(config.per_class)
            assert np.abs(vectors.mean(axis=0) - means[0, c]).max() < bound


def test_synthetic_class_swap():
    config = SynthConfigFactory(preset=Preset.CLASS_SWAP, steps=4)

    means = synthetic_means(config)

    for step in range(3):
        np.testing.assert_array_equal(means[step], means[0])
    np.testing.assert_array_equal(means[3], means[0][::-1])


def test_synthetic_global_shift():
    config = SynthConfigFactory(preset=Preset.GLOBAL_SHIFT, drift=0.5, noise=2.0)

    means = synthetic_means(config)

    shifts = means[1:] - means[:-1]
    np.testing.assert_allclose(shifts[:, 0], shifts[:, 1], atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(shifts[:, 0], axis=1), 1.0, atol=1e-12)


def test_synthetic_gradual_rotation():
    config = SynthConfigFactory(preset=Preset.GRADUAL_ROTATION, drift=0.3, steps=4)

    means = synthetic_means(config)

    for step in range(config.steps):
        np.testing.assert_allclose(
            np.linalg.norm(means[step], axis=1), np.linalg.norm(means[0], axis=1)
        )
        cosine = means[step, 0] @ means[0, 0] / np.linalg.norm(means[0, 0]) ** 2
        assert cosine == pytest.approx(math.cos(0.3 * step))


def test_describe():
    corpus = generate_synthetic(SynthConfigFactory(per_class=10, steps=2))

    table = describe(corpus)

    assert list(table.columns) == ['step', 'name', 'split', 'label', 'count']
    assert table['count'].sum() == 40
    train = table[(table.step == 1) & (table.label == 'c0') & (table.split == 'train')]
    assert train['count'].tolist() == [8]
