"""
Corpus files, stratified splits and the synthetic drift generator.

A corpus is a pair of files: a comma-separated data table with header
``id,step,split,label,e0,...,e{D-1}`` and a TOML manifest naming the dimension,
the steps and the label inventory.
"""
import csv
import dataclasses
import hashlib
import io
import logging
import math

from collections import defaultdict
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import toml

from marshmallow import ValidationError

from . import errors, schemas
from .types import Corpus, EmbeddingRecord, Manifest, Preset, Split, SynthConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FIELDS = ('id', 'step', 'split', 'label')
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
FRACTION_TOLERANCE = 1e-9


def header(dimension: int) -> List[str]:
    return [*FIELDS, *(f'e{i}' for i in range(dimension))]


def read_manifest(path: PathLike) -> Manifest:
    """
    :raises MalformedManifest: if the document is not valid TOML or misses a key
    """
    try:
        return schemas.ManifestSchema().load(toml.load(path))
    except toml.TomlDecodeError as e:
        raise errors.MalformedManifest(f"{path}: {e}") from e
    except ValidationError as e:
        raise errors.MalformedManifest(f"{path}: {e.messages}") from e


def render_manifest(manifest: Manifest) -> str:
    return toml.dumps(schemas.ManifestSchema().dump(manifest))


def write_manifest(manifest: Manifest, path: PathLike):
    Path(path).write_text(render_manifest(manifest), encoding='utf-8')


def _parse_row(row: List[str], line: int, dimension: int) -> EmbeddingRecord:
    if len(row) != len(FIELDS) + dimension:
        raise errors.RaggedRow(f"line {line}: {len(row)} fields")

    sample_id, step, split, label, *values = row
    try:
        return EmbeddingRecord(
            id=sample_id,
            step=int(step),
            split=Split(split),
            label=label or None,
            vector=np.array([float(value) for value in values]),
        )
    except ValueError as e:
        raise errors.RaggedRow(f"line {line}: {e}") from e


def read_corpus(data_path: PathLike, manifest_path: PathLike) -> Corpus:
    """
    Load a corpus from its data file and manifest

    :raises MalformedHeader: if the header does not match the manifest dimension
    :raises RaggedRow: if a row has the wrong number of fields or a bad value
    :raises UnknownStep: if a record's step is not in the manifest
    :raises UnknownLabel: if a record's label is not in the manifest
    :raises DuplicateId: if two records share an id
    """
    manifest = read_manifest(manifest_path)

    with open(data_path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first != header(manifest.dimension):
            raise errors.MalformedHeader(f"{data_path}: {first}")

        records = [
            _parse_row(row, reader.line_num, manifest.dimension) for row in reader
        ]

    corpus = Corpus(records=records, manifest=manifest)
    validate(corpus)

    logger.info(
        "read %d record(s) over %d step(s) from %s",
        len(records),
        len(manifest.steps),
        data_path,
    )
    return corpus


def validate(corpus: Corpus):
    """Check that every record fits the manifest and ids are unique"""
    manifest = corpus.manifest
    labels = set(manifest.labels)
    seen = set()

    for record in corpus.records:
        if record.id in seen:
            raise errors.DuplicateId(record.id)
        seen.add(record.id)

        if record.step not in manifest.steps:
            raise errors.UnknownStep(f"{record.id}: step {record.step}")
        if record.label is not None and record.label not in labels:
            raise errors.UnknownLabel(f"{record.id}: {record.label!r}")
        if np.shape(record.vector) != (manifest.dimension,):
            raise errors.RaggedRow(
                f"{record.id}: vector of shape {np.shape(record.vector)}"
            )


def render_data(corpus: Corpus) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header(corpus.manifest.dimension))

    for record in corpus.records:
        writer.writerow(
            [
                record.id,
                record.step,
                record.split.value,
                record.label or '',
                *(format(value, '.17g') for value in record.vector),
            ]
        )

    return buffer.getvalue()


def write_corpus(corpus: Corpus, data_path: PathLike, manifest_path: PathLike):
    """Write a corpus losslessly: floats keep 17 significant digits"""
    validate(corpus)
    with open(data_path, 'w', newline='', encoding='utf-8') as f:
        f.write(render_data(corpus))
    write_manifest(corpus.manifest, manifest_path)


def corpus_digest(corpus: Corpus) -> str:
    """SHA-256 of the serialized data file followed by the serialized manifest"""
    digest = hashlib.sha256()
    digest.update(render_data(corpus).encode('utf-8'))
    digest.update(render_manifest(corpus.manifest).encode('utf-8'))
    return digest.hexdigest()


def _check_fractions(fractions: Sequence[float]) -> Tuple[float, float, float]:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise errors.InvalidFractions(str(tuple(fractions)))
    if abs(sum(fractions) - 1.0) > FRACTION_TOLERANCE:
        raise errors.InvalidFractions(f"{tuple(fractions)} sums to {sum(fractions)}")
    return tuple(fractions)


def split_corpus(
    corpus: Corpus,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    rng_seed: int = 0,
) -> Corpus:
    """
    Assign train/dev/test per step and per class by a seeded shuffle

    Each stratum of n rows gets floor(n * f) dev and test rows; the rounding
    residue goes to train. Existing splits are overwritten and record order is
    preserved.

    :param fractions: train, dev and test fractions

    :raises InvalidFractions: if the fractions are negative or do not sum to 1
    :raises EmptyStep: if a manifest step has no records
    """
    _, dev_fraction, test_fraction = _check_fractions(fractions)
    validate(corpus)
    rng = np.random.default_rng(rng_seed)

    strata = defaultdict(list)
    for position, record in enumerate(corpus.records):
        strata[record.step, record.label].append(position)

    splits = {}
    for step in corpus.steps:
        keys = sorted(
            (key for key in strata if key[0] == step),
            key=lambda key: (key[1] is None, key[1] or ''),
        )
        if not keys:
            raise errors.EmptyStep(corpus.manifest.steps[step])

        for key in keys:
            positions = np.asarray(strata[key])[rng.permutation(len(strata[key]))]
            n = len(positions)
            n_test = math.floor(n * test_fraction + FRACTION_TOLERANCE)
            n_dev = math.floor(n * dev_fraction + FRACTION_TOLERANCE)

            for i, position in enumerate(positions.tolist()):
                if i < n_test:
                    splits[position] = Split.TEST
                elif i < n_test + n_dev:
                    splits[position] = Split.DEV
                else:
                    splits[position] = Split.TRAIN

    records = [
        dataclasses.replace(record, split=splits[position])
        for position, record in enumerate(corpus.records)
    ]
    return Corpus(records=records, manifest=corpus.manifest)


def _rotation(q0: np.ndarray, q1: np.ndarray, angle: float) -> np.ndarray:
    """Rotation by `angle` within span(q0, q1), identity on its complement"""
    return (
        np.eye(len(q0))
        + (math.cos(angle) - 1.0) * (np.outer(q0, q0) + np.outer(q1, q1))
        + math.sin(angle) * (np.outer(q1, q0) - np.outer(q0, q1))
    )


def _draw_means(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    size = (config.dimension, config.dimension)
    frame, _ = scipy.linalg.qr(rng.standard_normal(size))
    radius = config.separation * config.noise / math.sqrt(2.0)
    base = radius * frame[:, : config.classes].T

    means = np.repeat(base[None], config.steps, axis=0)
    preset = config.preset

    if preset is Preset.GLOBAL_SHIFT:
        direction = rng.standard_normal(config.dimension)
        direction /= np.linalg.norm(direction)
        for t in range(config.steps):
            means[t] += t * config.drift * config.noise * direction

    elif preset is Preset.CLASS_SWAP:
        means[-1, [0, 1]] = means[-1, [1, 0]]

    elif preset is Preset.GRADUAL_ROTATION:
        for t in range(config.steps):
            means[t] = base @ _rotation(frame[:, 0], frame[:, 1], t * config.drift).T

    elif preset is Preset.IRREGULAR:
        for t in range(1, config.steps):
            directions = rng.standard_normal((config.classes, config.dimension))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            tails = np.abs(rng.standard_t(2, config.classes))
            sizes = config.drift * config.noise * tails
            means[t] = means[t - 1] + sizes[:, None] * directions

    return means


def synthetic_means(config: SynthConfig) -> np.ndarray:
    """Population means of the generator, indexed [step, class, dimension]"""
    return _draw_means(config, np.random.default_rng(config.rng_seed))


def generate_synthetic(config: SynthConfig) -> Corpus:
    """
    Sample isotropic Gaussian classes whose means drift across steps

    Sample ids are ``s{step}_{class}_{i}``, labels ``c{class}`` and step names
    ``t{step}``. The corpus is split 80/10/10 with the same seed.
    """
    rng = np.random.default_rng(config.rng_seed)
    means = _draw_means(config, rng)

    records = []
    for t in range(config.steps):
        for c in range(config.classes):
            samples = means[t, c] + config.noise * rng.standard_normal(
                (config.per_class, config.dimension)
            )
            records.extend(
                EmbeddingRecord(
                    id=f's{t}_{c}_{i}',
                    step=t,
                    split=Split.TRAIN,
                    label=f'c{c}',
                    vector=vector,
                )
                for i, vector in enumerate(samples)
            )

    manifest = Manifest(
        dimension=config.dimension,
        steps={t: f't{t}' for t in range(config.steps)},
        labels=[f'c{c}' for c in range(config.classes)],
    )
    logger.debug(
        "generated %d record(s) for preset %s", len(records), config.preset.value
    )
    corpus = Corpus(records=records, manifest=manifest)
    return split_corpus(corpus, rng_seed=config.rng_seed)


def describe(corpus: Corpus) -> pd.DataFrame:
    """Record counts per step, split and label (unlabeled rows show as '')"""
    frame = pd.DataFrame(
        [
            {
                'step': record.step,
                'name': corpus.manifest.steps.get(record.step, ''),
                'split': record.split.value,
                'label': record.label or '',
            }
            for record in corpus.records
        ],
        columns=['step', 'name', 'split', 'label'],
    )
    return (
        frame.groupby(['step', 'name', 'split', 'label'])
        .size()
        .rename('count')
        .reset_index()
    )

