import numpy as np
import pytest

from seqalign import errors
from seqalign.alignment import (
    align_group,
    align_semi_supervised,
    align_unsupervised,
    apply_group,
    fit_clusters,
    make_groups,
    match_groups,
    pseudo_label,
    shared_clusters,
)
from seqalign.classify import fit_knn, predict
from seqalign.linalg import effective_dim
from seqalign.types import DomainData, LabeledSet, SeedSet, Split, stack


def _domain(x, labels=None, prefix='r'):
    x = np.asarray(x, dtype=float)
    ids = np.array([f'{prefix}{i}' for i in range(len(x))], dtype=object)
    if labels is not None:
        labels = np.asarray(labels, dtype=object)
    return DomainData(x=x, sample_ids=ids, labels=labels)


def _step(corpus, step, splits=None):
    ids, x, labels = stack(corpus.select(steps=[step], splits=splits))
    return DomainData(x=x, sample_ids=ids, labels=labels)


def _seeds(domain, m):
    entries = []
    for label in sorted(set(domain.labels.tolist())):
        rows = np.flatnonzero(domain.labels == label)[:m]
        entries.extend((domain.sample_ids[row], label) for row in rows)
    return SeedSet(tuple(entries))


def _one_nn_accuracy(pair, truth):
    model = fit_knn(LabeledSet(coords=pair.source_coords, labels=pair.source_labels))
    return np.mean(predict(model, pair.target_coords) == truth)


def test_unsupervised_identical_domains(rng):
    x = rng.standard_normal((100, 6)) * np.arange(1, 7)
    source, target = _domain(x), _domain(x, prefix='t')

    pair = align_unsupervised(source, target, 3)

    (transform,) = pair.transforms.values()
    np.testing.assert_allclose(transform.transform.m, np.eye(3), atol=1e-8)
    np.testing.assert_allclose(pair.source_coords, pair.target_coords, atol=1e-8)


def test_unsupervised_global_shift_is_exact(rng):
    x = rng.standard_normal((200, 10)) * np.linspace(1.0, 4.0, 10)
    source, target = _domain(x), _domain(x + 5.0, prefix='t')

    pair = align_unsupervised(source, target, 5)

    np.testing.assert_allclose(pair.source_coords, pair.target_coords, atol=1e-6)
    assert pair.source_coords.shape == pair.target_coords.shape == (200, 5)


def test_unsupervised_fails_on_class_swap(class_swap):
    source, target = _step(class_swap, 0), _step(class_swap, 1)

    pair = align_unsupervised(source, target, 4)

    assert _one_nn_accuracy(pair, target.labels) <= 0.2


def test_unsupervised_clamps_dimension(rng):
    source = _domain(rng.standard_normal((5, 3)))
    target = _domain(rng.standard_normal((8, 3)), prefix='t')

    with pytest.warns(errors.DimensionClamped):
        pair = align_unsupervised(source, target, 10)
    assert pair.dim == 3

    with pytest.raises(errors.DimensionTooLarge):
        align_unsupervised(source, target, 10, clamp=False)


def test_pseudo_label_nearest_seed():
    target = _domain([[0, 0], [10, 10], [1, 0], [9, 10], [5, 5]])
    seeds = SeedSet((('r0', 'A'), ('r1', 'B')))

    labels = pseudo_label(target, seeds)

    assert labels.tolist() == ['A', 'B', 'A', 'B', 'A']


def test_pseudo_label_recovers_separated_clusters(rng):
    x = np.vstack(
        [rng.normal(0.0, 0.3, size=(50, 4)), rng.normal(3.0, 0.3, size=(50, 4))]
    )
    truth = np.array(['A'] * 50 + ['B'] * 50, dtype=object)
    target = _domain(x, truth)

    for iterations in (1, 3):
        labels = pseudo_label(target, _seeds(target, 5), iterations=iterations)
        np.testing.assert_array_equal(labels, truth)


def test_pseudo_label_keeps_seed_labels(rng):
    target = _domain(rng.standard_normal((30, 2)))
    # deliberately inconsistent seeds: they must not be overwritten
    seeds = SeedSet((('r0', 'A'), ('r1', 'B'), ('r2', 'A')))

    labels = pseudo_label(target, seeds, iterations=4)

    assert labels[:3].tolist() == ['A', 'B', 'A']
    assert set(labels.tolist()) <= {'A', 'B'}
    assert all(label is not None for label in labels)


def test_pseudo_label_errors(rng):
    target = _domain(rng.standard_normal((5, 2)))

    with pytest.raises(errors.EmptyInput):
        pseudo_label(target, SeedSet(()))

    with pytest.raises(errors.UnknownSeedId):
        pseudo_label(target, SeedSet((('missing', 'A'),)))

    with pytest.raises(errors.DuplicateId):
        pseudo_label(target, SeedSet((('r0', 'A'), ('r0', 'B'))))


def test_fit_clusters_single_cluster(rng):
    assert fit_clusters(rng.standard_normal((7, 3)), 1, 0).tolist() == [0] * 7


def test_fit_clusters_separates_clouds():
    centres = np.array([[0, 0], [100, 0], [0, 100], [100, 100], [50, 300]], dtype=float)
    x = np.repeat(centres, 10, axis=0)

    ids = fit_clusters(x, 5, rng_seed=3)

    assert ids.tolist() == sorted(ids.tolist())
    assert ids.tolist() == [cloud for cloud in range(5) for _ in range(10)]


def test_fit_clusters_too_few_samples(rng):
    with pytest.raises(errors.TooFewSamples):
        fit_clusters(rng.standard_normal((3, 2)), 5, 0)


def test_shared_clusters_are_consistent(rng):
    x = np.vstack([rng.normal(0, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
    source, target = _domain(x), _domain(x + 0.01, prefix='t')

    source_ids, target_ids = shared_clusters(source, target, k=2, rng_seed=0)

    np.testing.assert_array_equal(source_ids, target_ids)


def test_make_groups_by_label():
    groups = make_groups(['A', 'A', 'B', 'B'], d=1)

    assert list(groups.roster) == [('A', None), ('B', None)]
    assert groups.roster['A', None].tolist() == [0, 1]


def test_make_groups_with_clusters():
    groups = make_groups(['A'] * 20, np.array([0] * 10 + [1] * 10), d=3)

    assert {key: len(rows) for key, rows in groups.roster.items()} == {
        ('A', 0): 10,
        ('A', 1): 10,
    }


def test_make_groups_merges_small_groups():
    groups = make_groups(['A'] * 20, np.array([0] * 19 + [1]), d=3)

    assert {key: len(rows) for key, rows in groups.roster.items()} == {('A', 0): 20}
    assert groups.keys[-1] == ('A', 0)


def test_make_groups_errors():
    with pytest.raises(errors.EmptyInput):
        make_groups([], d=2)

    with pytest.raises(errors.EmptyInput):
        make_groups(['A', None], d=2)


def test_apply_group_carries_means(rng):
    xs = rng.normal(size=(40, 5))
    xt = 2 * rng.normal(size=(30, 5)) + 3.0

    group = align_group(xs, xt, 2)
    mapped = apply_group(group, xs)

    assert group.transform.m.shape == (2, 2)
    np.testing.assert_allclose(mapped.mean(axis=0), xt.mean(axis=0), atol=1e-10)


def test_apply_group_full_dimension_is_translation(rng):
    xs = rng.normal(size=(20, 3))
    xt = rng.normal(size=(25, 3)) - 1.0

    group = align_group(xs, xt, 3)

    expected = xs - xs.mean(axis=0) + xt.mean(axis=0)
    np.testing.assert_allclose(apply_group(group, xs), expected, atol=1e-10)


def test_apply_group_single_row_is_translation():
    xs = np.array([[1.0, 2.0]])
    xt = np.array([[0.0, 0.0], [2.0, 2.0]])

    group = align_group(xs, xt, 1)

    assert group.transform is None
    np.testing.assert_array_equal(apply_group(group, xs), [[1.0, 1.0]])


def test_semi_supervised_centres_classes(rng):
    means = {'A': ((0, 0, 0), (0, 5, 0)), 'B': ((4, 0, 0), (4, 5, 0))}
    xs, xt, ls, lt = [], [], [], []
    for label, (source_mean, target_mean) in means.items():
        xs.append(rng.normal(source_mean, 0.3, size=(20, 3)))
        xt.append(rng.normal(target_mean, 0.3, size=(20, 3)))
        ls += [label] * 20
        lt += [label] * 20
    source = _domain(np.vstack(xs), ls)
    target = _domain(np.vstack(xt), lt, prefix='t')

    unlabeled = DomainData(x=target.x, sample_ids=target.sample_ids)
    pair = align_semi_supervised(source, unlabeled, _seeds(target, 3), 2)

    for label in means:
        np.testing.assert_allclose(
            pair.source_coords[pair.source_labels == label].mean(axis=0),
            pair.target_coords[pair.target_labels == label].mean(axis=0),
            atol=1e-8,
        )
    assert pair.target_seed_mask.sum() == 6


@pytest.mark.parametrize('seed', range(20))
def test_semi_supervised_centring_with_clusters(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(3, 7))
    classes = ['A', 'B', 'C'][: int(rng.integers(2, 4))]

    def sample(n):
        labels = rng.choice(classes, size=n)
        offsets = {label: rng.normal(0, 5, D) for label in classes}
        x = np.vstack([offsets[label] + rng.standard_normal(D) for label in labels])
        return x, labels.astype(object)

    xs, ls = sample(int(rng.integers(30, 60)))
    xt, lt = sample(int(rng.integers(30, 60)))
    source, target = _domain(xs, ls), _domain(xt, lt, prefix='t')
    seeds = _seeds(target, 2)
    if not set(ls.tolist()) <= set(seeds.labels):
        pytest.skip("a source class is absent from the target sample")

    d, k, use_clusters = int(rng.integers(1, D)), 3, bool(seed % 2)
    unlabeled = DomainData(x=target.x, sample_ids=target.sample_ids)
    pair = align_semi_supervised(
        source,
        unlabeled,
        seeds,
        d,
        use_clusters=use_clusters,
        clusters=k,
        rng_seed=seed,
    )

    source_clusters = target_clusters = None
    if use_clusters:
        source_clusters, target_clusters = shared_clusters(source, unlabeled, k, seed)
    source_groups, target_groups = match_groups(
        source.labels,
        source_clusters,
        pair.target_labels,
        target_clusters,
        d=effective_dim(d, target.n, D),
    )

    assert set(pair.transforms) == set(source_groups.roster)
    for key, rows in source_groups.roster.items():
        np.testing.assert_allclose(
            pair.source_coords[rows].mean(axis=0),
            pair.target_coords[target_groups.roster[key]].mean(axis=0),
            atol=1e-8,
        )


def test_semi_supervised_self_alignment(rng):
    """Groups lying in d-dimensional affine subspaces are mapped onto themselves"""
    rows, labels = [], []
    for label in ('A', 'B'):
        frame = np.linalg.qr(rng.standard_normal((5, 5)))[0][:, :2]
        rows.append(rng.normal(0, 5, 5) + rng.standard_normal((20, 2)) @ frame.T)
        labels += [label] * 20
    x = np.vstack(rows)
    source, target = _domain(x, labels), _domain(x, labels)

    pair = align_semi_supervised(source, target, _seeds(target, 20), 2)

    np.testing.assert_allclose(pair.source_coords, pair.target_coords, atol=1e-6)


def test_semi_supervised_succeeds_on_class_swap(class_swap):
    source = _step(class_swap, 0, [Split.TRAIN])
    target = _step(class_swap, 1)
    seeds = _seeds(_step(class_swap, 1, [Split.TRAIN]), 10)
    unlabeled = DomainData(x=target.x, sample_ids=target.sample_ids)

    semi = align_semi_supervised(source, unlabeled, seeds, 4)
    unsup = align_unsupervised(source, target, 4)

    held_out = ~semi.target_seed_mask
    model = fit_knn(LabeledSet(coords=semi.source_coords, labels=semi.source_labels))
    semi_accuracy = np.mean(
        predict(model, semi.target_coords[held_out]) == target.labels[held_out]
    )

    assert semi_accuracy >= 0.95
    assert semi_accuracy - _one_nn_accuracy(unsup, target.labels) >= 0.5


def test_semi_supervised_is_deterministic(class_swap):
    source, target = _step(class_swap, 0, [Split.TRAIN]), _step(class_swap, 1)
    seeds = _seeds(target, 10)
    unlabeled = DomainData(x=target.x, sample_ids=target.sample_ids)

    first, second = (
        align_semi_supervised(
            source, unlabeled, seeds, 4, use_clusters=True, rng_seed=1
        )
        for _ in range(2)
    )

    np.testing.assert_array_equal(first.source_coords, second.source_coords)
    np.testing.assert_array_equal(first.target_coords, second.target_coords)


def test_semi_supervised_missing_seed_class(rng):
    source = _domain(rng.standard_normal((10, 2)), ['A'] * 5 + ['B'] * 5)
    target = _domain(rng.standard_normal((10, 2)), prefix='t')

    with pytest.raises(errors.MissingSeedClass):
        align_semi_supervised(source, target, SeedSet((('t0', 'A'),)), 1)
