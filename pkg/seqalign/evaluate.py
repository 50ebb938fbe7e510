"""
Sequential evaluation: predict each time-step from the ones before it.

For every test step after the first, every requested mode trains a classifier
on its own training set and is scored on the test step's evaluation split. All
randomness comes from seeds derived from (rng_seed, step, stream), so a cell's
result does not depend on which other cells run or in which order.
"""
import dataclasses
import hashlib
import logging
import math
import time

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import toml

from joblib import Parallel, delayed
from scipy.spatial.distance import cdist
from scipy.stats import norm
from sklearn.metrics import accuracy_score, f1_score

from . import __version__, errors, schemas
from .classify import fit_classifier, oversample, predict
from .data import PathLike, corpus_digest
from .temporal import build_tree, step_space
from .types import (
    AlignedPair,
    Corpus,
    DomainData,
    EmbeddingRecord,
    LabeledSet,
    MetricCell,
    Mode,
    Report,
    RunConfig,
    SeedSet,
    Split,
    SweepPoint,
    stack,
)

logger = logging.getLogger(__name__)

METRICS = ('accuracy', 'macro_f1')
REPORT_COLUMNS = ['test_step', *(mode.value for mode in Mode)]
SWEEP_COLUMNS = ['m', 'mean', 'lower', 'upper', 'std', 'repeats']
AVERAGE_ROW = 'avg'


def cell_seed(rng_seed: int, step: int, stream: str) -> int:
    """Stable 32-bit seed for one random stream of one test step"""
    digest = hashlib.sha256(f'{rng_seed}:{step}:{stream}'.encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'big')


def metrics(predictions: Sequence, truth: Sequence) -> MetricCell:
    """
    Accuracy, per-class F1 and macro-F1 over the labels present in `truth`

    Classes with no predicted and no true rows score 0.

    :raises LengthMismatch: if the sequences differ in length
    :raises EmptyInput: if they are empty
    """
    predictions, truth = list(predictions), list(truth)
    if len(predictions) != len(truth):
        raise errors.LengthMismatch(
            f"{len(predictions)} predictions, {len(truth)} labels"
        )
    if not truth:
        raise errors.EmptyInput("nothing to score")

    labels = sorted(set(truth))
    per_class = f1_score(
        truth, predictions, labels=labels, average=None, zero_division=0
    )

    return MetricCell(
        accuracy=float(accuracy_score(truth, predictions)),
        macro_f1=float(np.mean(per_class)),
        per_class_f1={label: float(f1) for label, f1 in zip(labels, per_class)},
        support={label: truth.count(label) for label in labels},
        n_eval=len(truth),
    )


def select_seeds(
    records: Sequence[EmbeddingRecord],
    m: int,
    rng_seed: int,
    *,
    classes: Optional[Sequence[str]] = None,
) -> SeedSet:
    """
    Draw min(m, class size) labeled rows per class without replacement

    :param records: candidate rows, usually the test step's train split
    :param m: seeds per class
    :param classes: classes that must be seeded; defaults to those present

    :raises MissingClass: if a required class has no labeled row
    """
    if m < 1:
        raise errors.InvalidConfig(f"seeds per class must be at least 1, got {m}")

    by_class = {}
    for record in records:
        if record.label is not None:
            by_class.setdefault(record.label, []).append(record.id)

    rng = np.random.default_rng(rng_seed)
    entries = []
    for label in sorted(by_class if classes is None else classes):
        members = by_class.get(label)
        if not members:
            raise errors.MissingClass(label)

        size = min(m, len(members))
        chosen = np.sort(rng.choice(len(members), size=size, replace=False))
        entries.extend((members[i], label) for i in chosen)

    return SeedSet(tuple(entries))


def _history_space(corpus: Corpus, step: int):
    ids, x, labels = stack(_train_rows(corpus, step))
    if not len(ids):
        raise errors.EmptyStep(f"{corpus.manifest.steps[step]} has no labeled rows")
    return step_space(step, x, ids, labels)


def _test_space(corpus: Corpus, step: int, seeds: Optional[SeedSet]):
    ids, x, _ = stack(corpus.select(steps=[step]))
    known = dict(seeds.entries) if seeds is not None else {}
    labels = np.array([known.get(sample_id) for sample_id in ids], dtype=object)
    return step_space(step, x, ids, labels)


def _train_rows(corpus: Corpus, step: int) -> List[EmbeddingRecord]:
    return corpus.select(steps=[step], splits=[Split.TRAIN], labeled=True)


def _records_set(records: Sequence[EmbeddingRecord]) -> LabeledSet:
    _, x, labels = stack(records)
    return LabeledSet(coords=x, labels=labels)


def _ambient_training(
    corpus: Corpus, test_step: int, mode: Mode, config: RunConfig, seeds: SeedSet
) -> LabeledSet:
    steps = corpus.steps
    position = steps.index(test_step)

    if mode is Mode.SAME:
        return _records_set(_train_rows(corpus, test_step))
    if mode is Mode.PREV:
        return _records_set(_train_rows(corpus, steps[position - 1]))

    others = steps[:position]
    if config.all_includes_future:
        others = others + steps[position + 1 :]

    seed_ids = set(seeds.ids)
    records = corpus.select(steps=others, splits=[Split.TRAIN], labeled=True)
    records += [
        record for record in _train_rows(corpus, test_step) if record.id in seed_ids
    ]
    return _records_set(records)


def _aligned_spaces(
    corpus: Corpus, test_step: int, mode: Mode, config: RunConfig, seeds: SeedSet
):
    steps = corpus.steps
    position = steps.index(test_step)
    history = steps[:position] if mode.unbounded else steps[position - 1 : position]

    spaces = [_history_space(corpus, step) for step in history]
    spaces.append(_test_space(corpus, test_step, seeds if mode.supervised else None))

    tree = build_tree(
        spaces,
        config.dim,
        use_clusters=mode is Mode.SEMI_UNB_CLST,
        clusters=config.clusters,
        rng_seed=cell_seed(config.rng_seed, test_step, mode.value),
        supervised=mode.supervised,
        iterations=config.pseudo_label_iterations,
    )
    root = tree.root
    rows = {sample_id: i for i, sample_id in enumerate(root.sample_ids.tolist())}

    training = LabeledSet(
        coords=root.coords[root.seed_mask], labels=root.labels[root.seed_mask]
    )
    return training, lambda ids: root.coords[[rows[sample_id] for sample_id in ids]]


def run_mode(
    corpus: Corpus,
    test_step: int,
    mode: Mode,
    config: RunConfig,
) -> MetricCell:
    """
    Train and score one (test step, mode) cell

    :raises UnknownStep: if test_step is not a corpus step
    :raises NoHistory: if the mode needs a preceding step and there is none
    """
    if test_step not in corpus.manifest.steps:
        raise errors.UnknownStep(str(test_step))

    started = time.perf_counter()
    name = corpus.manifest.steps[test_step]
    position = corpus.steps.index(test_step)
    if position == 0 and mode is not Mode.SAME and mode is not Mode.ALL:
        raise errors.NoHistory(f"{mode.value} at step {name}")

    seeds = SeedSet(())
    if mode is Mode.ALL or mode.supervised:
        seeds = select_seeds(
            _train_rows(corpus, test_step),
            config.seeds_per_class,
            cell_seed(config.rng_seed, test_step, 'seeds'),
        )

    split = config.eval_split
    evaluated = corpus.select(steps=[test_step], splits=[split], labeled=True)
    if not evaluated:
        raise errors.EmptyInput(f"no labeled {split.value} rows at step {name}")
    eval_ids, eval_x, truth = stack(evaluated)

    if mode.aligned:
        training, locate = _aligned_spaces(corpus, test_step, mode, config, seeds)
        eval_coords = locate(eval_ids)
    else:
        training = _ambient_training(corpus, test_step, mode, config, seeds)
        eval_coords = eval_x

    train_seed = cell_seed(config.rng_seed, test_step, 'train')
    if config.oversample:
        training = oversample(training, train_seed)

    model = fit_classifier(training, config, rng_seed=train_seed)
    cell = metrics(predict(model, eval_coords), truth)
    cell.n_train = len(training.labels)

    logger.debug(
        "cell (%s, %s): accuracy %.4f in %.2fs",
        name,
        mode.value,
        cell.accuracy,
        time.perf_counter() - started,
    )
    return cell


def compute_cells(
    corpus: Corpus, config: RunConfig
) -> Dict[Tuple[int, Mode], MetricCell]:
    """Every (test step, mode) cell, computed on a pool of `config.jobs` threads"""
    steps = corpus.steps
    if len(steps) < 2:
        raise errors.TooFewSteps(f"corpus has {len(steps)} step(s)")

    jobs = [(step, mode) for step in steps[1:] for mode in Mode if mode in config.modes]
    results = Parallel(n_jobs=config.jobs, prefer='threads')(
        delayed(run_mode)(corpus, step, mode, config) for step, mode in jobs
    )
    return dict(zip(jobs, results))


def run_protocol(corpus: Corpus, config: RunConfig) -> Report:
    """
    Run every requested mode on every step after the first

    :returns: report with one cell per (test step, mode), per-mode unweighted
        averages and a provenance block

    :raises TooFewSteps: if the corpus has fewer than two steps
    """
    logger.info(
        "running %d mode(s) with seed %d: %s",
        len(config.modes),
        config.rng_seed,
        schemas.RunConfigSchema().dump(config),
    )
    cells = compute_cells(corpus, config)

    modes = [mode for mode in Mode if mode in config.modes]
    averages = {}
    for mode in modes:
        column = [cell for (_, cell_mode), cell in cells.items() if cell_mode is mode]
        averages[mode] = {
            name: float(np.mean([getattr(cell, name) for cell in column]))
            for name in METRICS
        }

    return Report(
        steps={step: corpus.manifest.steps[step] for step in corpus.steps[1:]},
        modes=modes,
        cells=cells,
        averages=averages,
        provenance={
            'config': schemas.RunConfigSchema().dump(config),
            'rng_seed': config.rng_seed,
            'corpus_digest': corpus_digest(corpus),
            'version': __version__,
        },
    )


def sweep_seeds(
    corpus: Corpus,
    config: RunConfig,
    m_grid: Sequence[int],
    *,
    repeats: int = 5,
    metric: str = 'accuracy',
    mode: Mode = Mode.SEMI,
) -> List[SweepPoint]:
    """
    Score one mode for several seeds-per-class values

    Repetition r uses rng seed `config.rng_seed + r` for every m, so the runs
    are paired across the grid. Each value is the metric averaged over test
    steps; the band is a normal-approximation 95% interval of the mean.
    """
    if metric not in METRICS:
        raise errors.InvalidConfig(f"unknown metric {metric!r}")
    if repeats < 1 or not m_grid:
        raise errors.InvalidConfig("sweep needs a grid and at least one repetition")

    z = norm.ppf(0.975)
    points = []
    for m in m_grid:
        values = []
        for repetition in range(repeats):
            run = dataclasses.replace(
                config,
                seeds_per_class=m,
                rng_seed=config.rng_seed + repetition,
                modes=[mode],
            )
            cells = compute_cells(corpus, run)
            scores = [getattr(cell, metric) for cell in cells.values()]
            values.append(float(np.mean(scores)))

        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if repeats > 1 else 0.0
        half = z * std / math.sqrt(repeats)
        points.append(
            SweepPoint(
                m=m,
                mean=mean,
                lower=mean - half,
                upper=mean + half,
                std=std,
                values=values,
            )
        )
        logger.info("m=%d: %s %.4f ± %.4f", m, metric, mean, half)

    return points


def metric_table(report: Report, metric: str) -> pd.DataFrame:
    rows = []
    for step, name in sorted(report.steps.items()):
        row = {'test_step': name}
        for mode in report.modes:
            cell = report.cells.get((step, mode))
            if cell is not None:
                row[mode.value] = getattr(cell, metric)
        rows.append(row)

    average = {'test_step': AVERAGE_ROW}
    for mode, values in report.averages.items():
        average[mode.value] = values[metric]
    rows.append(average)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report(report: Report, out_dir: PathLike) -> List[Path]:
    """Write accuracy.csv, macro_f1.csv and report.toml; returns their paths"""
    out_dir = Path(out_dir)
    paths = []

    for metric in METRICS:
        path = out_dir / f'{metric}.csv'
        metric_table(report, metric).to_csv(
            path, index=False, float_format='%.17g', na_rep='', lineterminator='\n'
        )
        paths.append(path)

    path = out_dir / 'report.toml'
    path.write_text(toml.dumps(schemas.ReportSchema().dump(report)), encoding='utf-8')
    paths.append(path)

    return paths


def read_report(path: PathLike) -> Report:
    return schemas.ReportSchema().load(toml.load(path))


def write_sweep(points: Sequence[SweepPoint], path: PathLike) -> Path:
    frame = pd.DataFrame(
        [
            (
                point.m,
                point.mean,
                point.lower,
                point.upper,
                point.std,
                len(point.values),
            )
            for point in points
        ],
        columns=SWEEP_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    return Path(path)


def neighbour_table(
    pair: AlignedPair, source: DomainData, target: DomainData, k: int = 5
) -> pd.DataFrame:
    """
    Nearest target rows of every source row before and after alignment

    One row per (source sample, rank) with the ambient neighbour and the
    neighbour in the aligned frame, each with its target label.
    """
    if k < 1:
        raise errors.InvalidConfig(f"k must be at least 1, got {k}")
    k = min(k, target.n)

    target_labels = target.labels if target.labels is not None else pair.target_labels
    if target_labels is None:
        target_labels = np.full(target.n, None, dtype=object)

    before = np.argsort(cdist(source.x, target.x), axis=1, kind='stable')[:, :k]
    after = np.argsort(
        cdist(pair.source_coords, pair.target_coords), axis=1, kind='stable'
    )[:, :k]

    source_labels = source.labels if source.labels is not None else [None] * source.n
    rows = [
        (
            source.sample_ids[i],
            source_labels[i] or '',
            rank + 1,
            target.sample_ids[before[i, rank]],
            target_labels[before[i, rank]] or '',
            target.sample_ids[after[i, rank]],
            target_labels[after[i, rank]] or '',
        )
        for i in range(source.n)
        for rank in range(k)
    ]
    return pd.DataFrame(
        rows,
        columns=[
            'source_id',
            'source_label',
            'rank',
            'ambient_id',
            'ambient_label',
            'aligned_id',
            'aligned_label',
        ],
    )
