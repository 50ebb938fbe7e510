"""
Unbounded-time alignment: overlapping adjacent joins arranged as a tree.

Level 0 holds one space per time-step in the ambient embedding frame. Level l + 1
joins the adjacent spaces (i, i + 1) of level l, so level l has (#steps - l)
spaces and the single space at the top covers every step. In each join the later
space is the target frame and rows present on both sides keep the later copy.
"""
import dataclasses
import logging

from typing import Optional, Sequence

import numpy as np

from . import errors
from .alignment import (
    DEFAULT_CLUSTERS,
    align_semi_supervised,
    align_unsupervised,
    fit_clusters,
    shared_clusters,
)
from .linalg import effective_dim
from .types import AlignmentTree, DomainData, JointSpace, SeedSet

logger = logging.getLogger(__name__)


def step_space(
    step: int,
    x: np.ndarray,
    sample_ids: np.ndarray,
    labels: np.ndarray,
    seed_mask: Optional[np.ndarray] = None,
) -> JointSpace:
    """
    Level-0 space of one time-step

    :param seed_mask: rows whose label is a true annotation; defaults to every
        labeled row
    """
    labels = np.asarray(labels, dtype=object)
    if seed_mask is None:
        seed_mask = np.array([label is not None for label in labels], dtype=bool)

    return JointSpace(
        level=0,
        covered_steps=(step,),
        coords=np.asarray(x, dtype=float),
        labels=labels,
        sample_ids=np.asarray(sample_ids, dtype=object),
        seed_mask=np.asarray(seed_mask, dtype=bool),
    )


def _domain(space: JointSpace) -> DomainData:
    return DomainData(
        x=space.coords,
        sample_ids=space.sample_ids,
        labels=space.labels,
        cluster_ids=space.cluster_ids,
    )


def join_pair(
    left: JointSpace,
    right: JointSpace,
    d: int,
    *,
    use_clusters: bool = False,
    clusters: int = DEFAULT_CLUSTERS,
    rng_seed: int = 0,
    supervised: bool = True,
    iterations: int = 1,
) -> JointSpace:
    """
    Align an earlier space onto a later one and merge them into one space

    The seed-flagged rows of the right space seed the alignment. Rows whose
    sample id occurs on both sides keep only the right-hand copy.

    :param left: earlier space, the alignment source
    :param right: later space, the reference frame
    :param d: subspace dimension of the joint space
    :param use_clusters: group by (label, cluster id) as well as by label
    :param clusters: number of k-means clusters when ids are not carried yet
    :param rng_seed: k-means seed
    :param supervised: semi-supervised alignment; unsupervised when off
    :param iterations: pseudo-labeling rounds

    :returns: joint space one level above the higher input

    :raises FrameMismatch: if the spaces have different column counts
    :raises MissingSeedClass: if a left class has no seed on the right
    """
    if left.dim != right.dim:
        raise errors.FrameMismatch(f"left has {left.dim} columns, right {right.dim}")

    if use_clusters and (left.cluster_ids is None or right.cluster_ids is None):
        left_ids, right_ids = shared_clusters(
            _domain(left), _domain(right), clusters, rng_seed
        )
        left = dataclasses.replace(left, cluster_ids=left_ids)
        right = dataclasses.replace(right, cluster_ids=right_ids)

    source, target = _domain(left), _domain(right)

    if supervised:
        seeds = SeedSet(
            tuple(
                (sample_id, label)
                for sample_id, label, seed in zip(
                    right.sample_ids, right.labels, right.seed_mask
                )
                if seed
            )
        )
        pair = align_semi_supervised(
            source,
            target,
            seeds,
            d,
            use_clusters=use_clusters,
            clusters=clusters,
            rng_seed=rng_seed,
            iterations=iterations,
        )
        right_labels = pair.target_labels
    else:
        pair = align_unsupervised(source, target, d)
        right_labels = right.labels

    shared = set(right.sample_ids.tolist())
    keep = np.array(
        [sample_id not in shared for sample_id in left.sample_ids], dtype=bool
    )

    cluster_ids = None
    if left.cluster_ids is not None and right.cluster_ids is not None:
        cluster_ids = np.concatenate([left.cluster_ids[keep], right.cluster_ids])

    return JointSpace(
        level=max(left.level, right.level) + 1,
        covered_steps=tuple(sorted(set(left.covered_steps) | set(right.covered_steps))),
        coords=np.vstack([pair.source_coords[keep], pair.target_coords]),
        labels=np.concatenate([left.labels[keep], right_labels]),
        sample_ids=np.concatenate([left.sample_ids[keep], right.sample_ids]),
        seed_mask=np.concatenate([left.seed_mask[keep], right.seed_mask]),
        cluster_ids=cluster_ids,
    )


def build_tree(
    steps: Sequence[JointSpace],
    d: int,
    *,
    use_clusters: bool = False,
    clusters: int = DEFAULT_CLUSTERS,
    rng_seed: int = 0,
    supervised: bool = True,
    iterations: int = 1,
) -> AlignmentTree:
    """
    Reduce a sequence of time-steps to one joint space

    Every level above 0 has the same number of columns: d clamped once against
    the ambient dimension and the smallest step. With clustering on, k-means runs
    once over all level-0 rows and the ids travel with the rows.

    :param steps: level-0 spaces in chronological order; the last one is the
        step to predict and carries only seed labels
    :param d: requested subspace dimension

    :returns: all levels of the tree

    :raises TooFewSteps: if fewer than two steps are given
    """
    if len(steps) < 2:
        raise errors.TooFewSteps(f"got {len(steps)}")

    steps = list(steps)
    d = effective_dim(d, min(space.n for space in steps), steps[0].dim)

    if use_clusters and any(space.cluster_ids is None for space in steps):
        rows = np.vstack([space.coords for space in steps])
        ids = fit_clusters(rows, clusters, rng_seed)
        bounds = np.cumsum([0] + [space.n for space in steps])
        steps = [
            dataclasses.replace(space, cluster_ids=ids[start:stop])
            for space, start, stop in zip(steps, bounds[:-1], bounds[1:])
        ]

    levels = [steps]
    while len(levels[-1]) > 1:
        below = levels[-1]
        levels.append(
            [
                join_pair(
                    below[i],
                    below[i + 1],
                    d,
                    use_clusters=use_clusters,
                    clusters=clusters,
                    rng_seed=rng_seed,
                    supervised=supervised,
                    iterations=iterations,
                )
                for i in range(len(below) - 1)
            ]
        )
        logger.debug("tree level %d: %d space(s)", len(levels) - 1, len(levels[-1]))

    return AlignmentTree(levels=levels)
