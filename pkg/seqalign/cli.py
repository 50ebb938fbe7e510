"""
Command-line driver: ``seqalign {synth,split,align,eval,sweep,inspect}``.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors, 3 on numerical
failures. Files written by a failing command are removed.
"""
import argparse
import logging
import os
import sys

from pathlib import Path
from typing import List, Optional, Sequence

import joblib
import numpy as np
import pandas as pd

from . import __version__, errors, schemas
from .alignment import align_semi_supervised, align_unsupervised
from .data import describe, generate_synthetic, read_corpus, split_corpus, write_corpus
from .evaluate import (
    cell_seed,
    neighbour_table,
    run_protocol,
    select_seeds,
    sweep_seeds,
    write_report,
    write_sweep,
)
from .types import (
    ClassifierKind,
    DomainData,
    Mode,
    Preset,
    RunConfig,
    Split,
    SynthConfig,
    stack,
)

logger = logging.getLogger(__name__)

DEFAULT_DIM = 100
DEFAULT_GRID = '1,2,5,10'
JOBS_VARIABLE = 'SSA_JOBS'
CORPUS_FILES = ['corpus.csv', 'manifest.toml']


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise errors.UsageError(message)


def _positive(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}")
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {number}")
    return number


def _grid(value: str) -> List[int]:
    return [_positive(item) for item in value.split(',') if item]


def _add_corpus(parser, *, out=True):
    parser.add_argument('--data', type=Path, required=True, help="corpus data file")
    parser.add_argument('--manifest', type=Path, required=True, help="corpus manifest")
    if out:
        parser.add_argument('--out', type=Path, required=True, help="output directory")


def _add_run(parser):
    parser.add_argument(
        '--dim', type=_positive, help=f"subspace dimension (default {DEFAULT_DIM})"
    )
    parser.add_argument('--seeds-per-class', type=_positive, default=10)
    parser.add_argument('--clusters', type=_positive, default=5)
    parser.add_argument(
        '--classifier',
        choices=[kind.value for kind in ClassifierKind],
        default=ClassifierKind.SVM.value,
    )
    parser.add_argument('--oversample', action='store_true')
    parser.add_argument('--all-includes-future', action='store_true')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--pseudo-label-iterations', type=_positive, default=1)
    parser.add_argument(
        '--eval-split',
        choices=[Split.TEST.value, Split.DEV.value],
        default=Split.TEST.value,
    )
    parser.add_argument(
        '--jobs', type=_positive, help=f"worker threads (env {JOBS_VARIABLE})"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog='seqalign', description="Sequential subspace alignment toolkit"
    )
    parser.add_argument('--version', action='version', version=__version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')

    commands = parser.add_subparsers(
        dest='command', required=True, parser_class=_Parser
    )

    synth = commands.add_parser('synth', help="write a synthetic drifting corpus")
    synth.add_argument(
        '--preset', choices=[preset.value for preset in Preset], required=True
    )
    synth.add_argument('--out', type=Path, required=True)
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--steps', type=_positive, default=4)
    synth.add_argument('--per-class', type=_positive, default=200)
    synth.add_argument('--dimension', type=_positive, default=16)
    synth.add_argument('--classes', type=_positive, default=2)
    synth.add_argument('--separation', type=float, default=10.0)
    synth.add_argument('--noise', type=float, default=1.0)
    synth.add_argument('--drift', type=float, default=0.5)

    split = commands.add_parser('split', help="assign train/dev/test splits")
    _add_corpus(split)
    split.add_argument('--fractions', type=float, nargs=3, default=[0.8, 0.1, 0.1])
    split.add_argument('--seed', type=int, default=0)

    align = commands.add_parser('align', help="align one step onto another")
    _add_corpus(align)
    align.add_argument(
        '--source', type=int, help="source step (default: second to last)"
    )
    align.add_argument('--target', type=int, help="target step (default: last)")
    align.add_argument(
        '--mode', choices=[Mode.UNSUP.value, Mode.SEMI.value], default='semi'
    )
    align.add_argument('--use-clusters', action='store_true')
    align.add_argument('--neighbours', type=_positive, help="also write neighbours.csv")
    _add_run(align)

    evaluate = commands.add_parser(
        'eval', help="run the sequential evaluation protocol"
    )
    _add_corpus(evaluate)
    evaluate.add_argument(
        '--mode',
        action='append',
        choices=[mode.value for mode in Mode],
        help="repeatable",
    )
    _add_run(evaluate)

    sweep = commands.add_parser(
        'sweep', help="score a mode over seeds-per-class values"
    )
    _add_corpus(sweep)
    sweep.add_argument('--grid', type=_grid, default=_grid(DEFAULT_GRID))
    sweep.add_argument('--repeats', type=_positive, default=5)
    sweep.add_argument('--metric', choices=['accuracy', 'macro_f1'], default='accuracy')
    sweep.add_argument('--mode', choices=[mode.value for mode in Mode], default='semi')
    _add_run(sweep)

    inspect = commands.add_parser('inspect', help="print corpus statistics")
    _add_corpus(inspect, out=False)

    return parser


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs

    value = os.environ.get(JOBS_VARIABLE)
    if value is None:
        return joblib.cpu_count()
    try:
        return _positive(value)
    except argparse.ArgumentTypeError as e:
        raise errors.UsageError(f"{JOBS_VARIABLE}: {e}") from e


def run_config(args, modes: Sequence[Mode]) -> RunConfig:
    dim = args.dim
    if dim is None:
        logger.warning(
            "--dim not given, using the default subspace dimension %d", DEFAULT_DIM
        )
        dim = DEFAULT_DIM

    config = RunConfig(
        dim=dim,
        seeds_per_class=args.seeds_per_class,
        classifier=ClassifierKind(args.classifier),
        modes=list(modes),
        rng_seed=args.seed,
        clusters=args.clusters,
        oversample=args.oversample,
        all_includes_future=args.all_includes_future,
        pseudo_label_iterations=args.pseudo_label_iterations,
        eval_split=Split(args.eval_split),
        jobs=_jobs(args),
    )
    logger.info(
        "configuration (seed %d): %s",
        config.rng_seed,
        schemas.RunConfigSchema().dump(config),
    )
    return config


def _prepare(args, names: Sequence[str], outputs: List[Path]) -> List[Path]:
    args.out.mkdir(parents=True, exist_ok=True)
    paths = [args.out / name for name in names]
    # the command's own inputs are never removed, even when overwritten in place
    inputs = {
        Path(path).resolve()
        for path in (getattr(args, 'data', None), getattr(args, 'manifest', None))
        if path is not None
    }
    outputs.extend(path for path in paths if path.resolve() not in inputs)
    return paths


def synth(args, outputs: List[Path]):
    config = SynthConfig(
        preset=Preset(args.preset),
        dimension=args.dimension,
        classes=args.classes,
        per_class=args.per_class,
        steps=args.steps,
        separation=args.separation,
        noise=args.noise,
        drift=args.drift,
        rng_seed=args.seed,
    )
    logger.info(
        "synthetic corpus (seed %d): %s",
        config.rng_seed,
        schemas.SynthConfigSchema().dump(config),
    )

    corpus = generate_synthetic(config)
    data_path, manifest_path = _prepare(args, CORPUS_FILES, outputs)
    write_corpus(corpus, data_path, manifest_path)


def split(args, outputs: List[Path]):
    logger.info(
        "splitting %s with fractions %s (seed %d)", args.data, args.fractions, args.seed
    )
    corpus = read_corpus(args.data, args.manifest)
    corpus = split_corpus(corpus, args.fractions, args.seed)
    data_path, manifest_path = _prepare(args, CORPUS_FILES, outputs)
    write_corpus(corpus, data_path, manifest_path)


def align(args, outputs: List[Path]):
    corpus = read_corpus(args.data, args.manifest)
    mode = Mode(args.mode)
    config = run_config(args, [mode])

    steps = corpus.steps
    if len(steps) < 2 and (args.source is None or args.target is None):
        raise errors.TooFewSteps(f"corpus has {len(steps)} step(s)")
    source_step = steps[-2] if args.source is None else args.source
    target_step = steps[-1] if args.target is None else args.target
    for step in (source_step, target_step):
        if step not in corpus.manifest.steps:
            raise errors.UnknownStep(str(step))

    ids, x, labels = stack(
        corpus.select(steps=[source_step], splits=[Split.TRAIN], labeled=True)
    )
    source = DomainData(x=x, sample_ids=ids, labels=labels)
    ids, x, labels = stack(corpus.select(steps=[target_step]))
    target = DomainData(x=x, sample_ids=ids, labels=labels)

    if mode is Mode.SEMI:
        seeds = select_seeds(
            corpus.select(steps=[target_step], splits=[Split.TRAIN], labeled=True),
            config.seeds_per_class,
            cell_seed(config.rng_seed, target_step, 'seeds'),
        )
        pair = align_semi_supervised(
            source,
            DomainData(x=target.x, sample_ids=target.sample_ids),
            seeds,
            config.dim,
            use_clusters=args.use_clusters,
            clusters=config.clusters,
            rng_seed=cell_seed(config.rng_seed, target_step, mode.value),
            iterations=config.pseudo_label_iterations,
        )
        target_labels = pair.target_labels
    else:
        pair = align_unsupervised(source, target, config.dim)
        target_labels = np.full(target.n, None, dtype=object)

    names = ['aligned.csv']
    if args.neighbours:
        names.append('neighbours.csv')
    data_path, *rest = _prepare(args, names, outputs)

    rows = np.vstack([pair.source_coords, pair.target_coords])
    frame = pd.DataFrame(rows, columns=[f'z{i}' for i in range(pair.dim)])
    frame.insert(0, 'id', np.concatenate([source.sample_ids, target.sample_ids]))
    frame.insert(1, 'step', [source_step] * source.n + [target_step] * target.n)
    frame.insert(2, 'role', ['source'] * source.n + ['target'] * target.n)
    frame.insert(
        3,
        'label',
        [label or '' for label in np.concatenate([source.labels, target_labels])],
    )
    frame.insert(
        4, 'seed', [False] * source.n + [bool(seed) for seed in pair.target_seed_mask]
    )
    frame.to_csv(data_path, index=False, float_format='%.17g', lineterminator='\n')

    if args.neighbours:
        neighbour_table(pair, source, target, args.neighbours).to_csv(
            rest[0], index=False, lineterminator='\n'
        )

    logger.info(
        "aligned %s onto %s in %d dimension(s)",
        corpus.manifest.steps[source_step],
        corpus.manifest.steps[target_step],
        pair.dim,
    )


def evaluate(args, outputs: List[Path]):
    corpus = read_corpus(args.data, args.manifest)
    modes = [Mode(value) for value in args.mode] if args.mode else list(Mode)
    report = run_protocol(corpus, run_config(args, modes))

    _prepare(args, ['accuracy.csv', 'macro_f1.csv', 'report.toml'], outputs)
    write_report(report, args.out)

    for mode in report.modes:
        logger.info(
            "%s: accuracy %.4f, macro-F1 %.4f",
            mode.value,
            report.averages[mode]['accuracy'],
            report.averages[mode]['macro_f1'],
        )


def sweep(args, outputs: List[Path]):
    corpus = read_corpus(args.data, args.manifest)
    mode = Mode(args.mode)
    points = sweep_seeds(
        corpus,
        run_config(args, [mode]),
        args.grid,
        repeats=args.repeats,
        metric=args.metric,
        mode=mode,
    )
    (path,) = _prepare(args, ['sweep.csv'], outputs)
    write_sweep(points, path)


def inspect(args, outputs: List[Path]):
    corpus = read_corpus(args.data, args.manifest)
    print(f"dimension: {corpus.manifest.dimension}")
    print(f"records: {len(corpus.records)}")
    print(f"labels: {', '.join(corpus.manifest.labels)}")
    print(describe(corpus).to_string(index=False))


COMMANDS = {
    'synth': synth,
    'split': split,
    'align': align,
    'eval': evaluate,
    'sweep': sweep,
    'inspect': inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    outputs = []
    try:
        args = build_parser().parse_args(argv)
    except errors.UsageError as e:
        print(f"seqalign: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        return e.code or 0

    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr
    )

    try:
        COMMANDS[args.command](args, outputs)
    except Exception as e:
        logger.error("%s", e)
        logger.debug("traceback", exc_info=True)
        for path in outputs:
            if path.exists():
                path.unlink()
        return errors.exit_code_for(e)

    return 0
