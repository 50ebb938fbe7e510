"""
One-step alignment of a source domain onto a target domain.

Unsupervised alignment matches the global principal subspaces. Semi-supervised
alignment pseudo-labels the target from a few seeds, aligns each (class, cluster)
group separately, carries the group means across, and finally expresses both
domains in the target's global principal subspace.
"""
import logging
import math

from collections import defaultdict
from typing import Dict, Optional, Tuple

import numpy as np

from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from . import errors
from .linalg import effective_dim, fit_pca, project, reconstruct, solve_alignment
from .types import (
    AlignedPair,
    DomainData,
    GroupAssignment,
    GroupKey,
    GroupTransform,
    SeedSet,
)

logger = logging.getLogger(__name__)

DEFAULT_CLUSTERS = 5
KMEANS_MAX_ITER = 300

UNGROUPED: GroupKey = ('', None)


def _key_order(key: GroupKey):
    label, cluster = key
    return (label, -1 if cluster is None else cluster)


def align_unsupervised(
    source: DomainData, target: DomainData, d: int, *, clamp: bool = True
) -> AlignedPair:
    """
    Align the source's principal subspace onto the target's

    Source rows become (x - mean_S) C_S M*, target rows (x - mean_T) C_T, with
    M* = C_S^T C_T. Labels are passed through unchanged.

    :param source: source domain
    :param target: target domain
    :param d: requested subspace dimension
    :param clamp: reduce d to what the data supports instead of failing

    :returns: both domains in the target subspace frame

    :raises DegenerateInput: if either domain has fewer than two rows
    :raises DimensionTooLarge: if d does not fit and clamp is off
    """
    if source.dim != target.dim:
        raise errors.DimensionMismatch(f"source D={source.dim}, target D={target.dim}")

    d = effective_dim(d, min(source.n, target.n), source.dim, clamp=clamp)

    c_s = fit_pca(source.x, d)
    c_t = fit_pca(target.x, d)
    transform = solve_alignment(c_s, c_t)

    return AlignedPair(
        source_coords=project(c_s, source.x) @ transform.m,
        target_coords=project(c_t, target.x),
        source_labels=source.labels,
        target_labels=target.labels,
        target_seed_mask=np.zeros(target.n, dtype=bool),
        basis=c_t,
        transforms={
            UNGROUPED: GroupTransform(
                source_mean=c_s.mean,
                target_mean=c_t.mean,
                source_basis=c_s,
                target_basis=c_t,
                transform=transform,
            )
        },
    )


def pseudo_label(
    target: DomainData, seeds: SeedSet, *, iterations: int = 1
) -> np.ndarray:
    """
    Label every target row from a handful of seeds by nearest-neighbour search

    With a single iteration every non-seed row takes the label of its nearest
    seed (ties go to the earliest seed entry). With more iterations labels
    spread outwards: each round labels the closest share of the remaining rows
    from all rows labeled so far.

    :param target: target domain
    :param seeds: annotated target rows
    :param iterations: number of propagation rounds

    :returns: per-row labels; seed rows keep their seed label

    :raises EmptyInput: if there are no seeds
    :raises UnknownSeedId: if a seed is not a target row
    """
    if not len(seeds):
        raise errors.EmptyInput("no seeds given")
    if iterations < 1:
        raise errors.InvalidConfig("iterations must be at least 1")
    if len(set(seeds.ids)) != len(seeds):
        raise errors.DuplicateId("seed identifiers must be distinct")

    rows = {sample_id: i for i, sample_id in enumerate(target.sample_ids.tolist())}
    try:
        seed_rows = [rows[sample_id] for sample_id in seeds.ids]
    except KeyError as e:
        raise errors.UnknownSeedId(str(e.args[0])) from e

    labels = np.empty(target.n, dtype=object)
    labels[seed_rows] = np.array(seeds.labels, dtype=object)

    assigned = np.zeros(target.n, dtype=bool)
    assigned[seed_rows] = True

    reference = list(seed_rows)
    pending_total = target.n - len(seed_rows)

    for iteration in range(1, iterations + 1):
        pending = np.flatnonzero(~assigned)
        if not len(pending):
            break

        distances = cdist(target.x[pending], target.x[reference])
        nearest = np.argmin(distances, axis=1)

        quota = math.ceil(iteration / iterations * pending_total) - (
            pending_total - len(pending)
        )
        closest = np.argsort(distances[np.arange(len(pending)), nearest], kind='stable')
        chosen = closest[:quota]

        taken = pending[chosen]
        labels[taken] = labels[np.asarray(reference)[nearest[chosen]]]
        assigned[taken] = True
        reference.extend(taken.tolist())

    return labels


def fit_clusters(x: np.ndarray, k: int, rng_seed: int) -> np.ndarray:
    """k-means++ seeded Lloyd iterations; ids are renumbered by first appearance"""
    if x.shape[0] < k:
        raise errors.TooFewSamples(f"{x.shape[0]} samples for k={k}")
    if k == 1:
        return np.zeros(x.shape[0], dtype=int)

    kmeans = KMeans(
        n_clusters=k,
        init='k-means++',
        n_init=1,
        max_iter=KMEANS_MAX_ITER,
        tol=0.0,
        random_state=rng_seed,
        algorithm='lloyd',
    ).fit(x)
    logger.debug("k-means converged after %d iterations", kmeans.n_iter_)

    _, first = np.unique(kmeans.labels_, return_index=True)
    renumber = {cluster: i for i, cluster in enumerate(kmeans.labels_[np.sort(first)])}
    return np.array([renumber[cluster] for cluster in kmeans.labels_], dtype=int)


def shared_clusters(
    source: DomainData,
    target: DomainData,
    k: int = DEFAULT_CLUSTERS,
    rng_seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cluster the union of source and target rows so both domains share ids

    :returns: cluster ids of the source rows and of the target rows

    :raises TooFewSamples: if there are fewer rows than clusters
    """
    if source.dim != target.dim:
        raise errors.DimensionMismatch(f"source D={source.dim}, target D={target.dim}")

    ids = fit_clusters(np.vstack([source.x, target.x]), k, rng_seed)
    return ids[: source.n], ids[source.n :]


def _plan_groups(
    sizes: Dict[GroupKey, Tuple[int, ...]], d: int
) -> Tuple[Dict[GroupKey, GroupKey], Dict[GroupKey, int]]:
    """
    Decide which group every key joins and the subspace dimension of each group

    A key is kept when it has at least max(2, d + 1) rows on every side; other
    keys merge into the largest kept key of their label. A label without any
    kept key collapses into its largest key, with a reduced dimension.
    """
    threshold = max(2, d + 1)

    by_label = defaultdict(list)
    for key in sorted(sizes, key=_key_order):
        by_label[key[0]].append(key)

    mapping = {}
    for keys in by_label.values():
        kept = [key for key in keys if min(sizes[key]) >= threshold] or [
            max(keys, key=lambda key: (min(sizes[key]), sum(sizes[key])))
        ]
        largest = max(kept, key=lambda key: sum(sizes[key]))
        for key in keys:
            mapping[key] = key if key in kept else largest

    merged = {}
    for key, group in mapping.items():
        merged[group] = merged.get(group, 0) + np.asarray(sizes[key])

    dims = {
        group: max(1, min(d, int(size.min()) - 1)) for group, size in merged.items()
    }
    return mapping, dims


def _row_keys(labels, cluster_ids) -> list:
    if any(label is None for label in labels):
        raise errors.EmptyInput("every row needs a label to be grouped")

    if cluster_ids is None:
        return [(label, None) for label in labels]
    return [(label, int(cluster)) for label, cluster in zip(labels, cluster_ids)]


def _assignment(keys, mapping, dims) -> GroupAssignment:
    final = [mapping[key] for key in keys]

    roster = defaultdict(list)
    for row, group in enumerate(final):
        roster[group].append(row)

    ordered = sorted(roster.items(), key=lambda item: _key_order(item[0]))
    return GroupAssignment(
        keys=final,
        roster={group: np.asarray(rows) for group, rows in ordered},
        dims={group: dims[group] for group in roster},
    )


def make_groups(
    labels, cluster_ids: Optional[np.ndarray] = None, *, d: int
) -> GroupAssignment:
    """
    Group rows by (label, cluster id), merging groups too small to align

    :param labels: per-row labels
    :param cluster_ids: optional per-row cluster ids
    :param d: effective subspace dimension

    :returns: per-row group keys, roster and per-group dimension

    :raises EmptyInput: if there are no rows or a row is unlabeled
    """
    if not len(labels):
        raise errors.EmptyInput("no rows to group")

    keys = _row_keys(labels, cluster_ids)

    sizes = defaultdict(int)
    for key in keys:
        sizes[key] += 1

    mapping, dims = _plan_groups({key: (size,) for key, size in sizes.items()}, d)
    return _assignment(keys, mapping, dims)


def match_groups(
    source_labels,
    source_clusters: Optional[np.ndarray],
    target_labels,
    target_clusters: Optional[np.ndarray],
    *,
    d: int,
) -> Tuple[GroupAssignment, GroupAssignment]:
    """Group both domains with one shared plan, so group keys correspond"""
    source_keys = _row_keys(source_labels, source_clusters)
    target_keys = _row_keys(target_labels, target_clusters)

    sizes = defaultdict(lambda: [0, 0])
    for key in source_keys:
        sizes[key][0] += 1
    for key in target_keys:
        sizes[key][1] += 1

    mapping, dims = _plan_groups({key: tuple(size) for key, size in sizes.items()}, d)
    return (
        _assignment(source_keys, mapping, dims),
        _assignment(target_keys, mapping, dims),
    )


def align_group(xs: np.ndarray, xt: np.ndarray, d: int) -> GroupTransform:
    source_mean, target_mean = xs.mean(axis=0), xt.mean(axis=0)
    if len(xs) < 2 or len(xt) < 2:
        return GroupTransform(source_mean=source_mean, target_mean=target_mean)

    d = min(d, len(xs) - 1, len(xt) - 1, xs.shape[1])
    c_s, c_t = fit_pca(xs, d), fit_pca(xt, d)

    return GroupTransform(
        source_mean=c_s.mean,
        target_mean=c_t.mean,
        source_basis=c_s,
        target_basis=c_t,
        transform=solve_alignment(c_s, c_t),
    )


def apply_group(group: GroupTransform, x: np.ndarray) -> np.ndarray:
    """Map ambient source rows into the target group's ambient neighbourhood"""
    if group.transform is None:
        return x - group.source_mean + group.target_mean

    z = project(group.source_basis, x) @ group.transform.m
    return reconstruct(group.target_basis, z)


def align_semi_supervised(
    source: DomainData,
    target: DomainData,
    seeds: SeedSet,
    d: int,
    *,
    use_clusters: bool = False,
    clusters: int = DEFAULT_CLUSTERS,
    rng_seed: int = 0,
    iterations: int = 1,
    clamp: bool = True,
) -> AlignedPair:
    """
    Align source onto target group by group, guided by a few target seeds

    :param source: fully labeled source domain
    :param target: target domain; only the seed rows need labels
    :param seeds: annotated target rows, at least one per source class
    :param d: requested subspace dimension of the output frame
    :param use_clusters: refine classes with shared k-means cluster ids; ids
        already carried by both domains are used as they are
    :param clusters: number of k-means clusters
    :param rng_seed: k-means seed
    :param iterations: pseudo-labeling rounds
    :param clamp: reduce d to what the data supports instead of failing

    :returns: both domains in the target's global subspace frame

    :raises MissingSeedClass: if a source class has no seed
    :raises DegenerateInput: if the target has fewer than two rows
    """
    if source.dim != target.dim:
        raise errors.DimensionMismatch(f"source D={source.dim}, target D={target.dim}")
    if source.labels is None or any(label is None for label in source.labels):
        raise errors.EmptyInput("source domain must be fully labeled")

    missing = sorted(set(source.labels.tolist()) - set(seeds.labels))
    if missing:
        raise errors.MissingSeedClass(', '.join(missing))

    d = effective_dim(d, target.n, target.dim, clamp=clamp)

    target_labels = pseudo_label(target, seeds, iterations=iterations)
    seed_ids = set(seeds.ids)
    seed_mask = np.array([sample_id in seed_ids for sample_id in target.sample_ids])

    source_clusters = target_clusters = None
    if use_clusters:
        if source.cluster_ids is not None and target.cluster_ids is not None:
            source_clusters, target_clusters = source.cluster_ids, target.cluster_ids
        else:
            source_clusters, target_clusters = shared_clusters(
                source, target, clusters, rng_seed
            )

    source_groups, target_groups = match_groups(
        source.labels, source_clusters, target_labels, target_clusters, d=d
    )
    logger.debug(
        "aligning %d group(s): %s",
        len(source_groups.roster),
        {key: len(rows) for key, rows in source_groups.roster.items()},
    )

    mapped = np.empty_like(source.x)
    transforms = {}
    for key, rows in source_groups.roster.items():
        target_rows = target_groups.roster.get(key)
        if target_rows is None:
            raise errors.MissingSeedClass(f"no target rows for group {key}")

        group = align_group(
            source.x[rows], target.x[target_rows], source_groups.dims[key]
        )
        mapped[rows] = apply_group(group, source.x[rows])
        transforms[key] = group

    basis = fit_pca(target.x, d)

    return AlignedPair(
        source_coords=project(basis, mapped),
        target_coords=project(basis, target.x),
        source_labels=source.labels,
        target_labels=target_labels,
        target_seed_mask=seed_mask,
        basis=basis,
        transforms=transforms,
    )
