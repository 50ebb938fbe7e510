from __future__ import annotations

import enum

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import errors

if TYPE_CHECKING:
    from sklearn.svm import SVC

Label = str
GroupKey = Tuple[Label, Optional[int]]


class Split(enum.Enum):
    TRAIN = 'train'
    DEV = 'dev'
    TEST = 'test'


class Preset(enum.Enum):
    GLOBAL_SHIFT = 'global-shift'
    CLASS_SWAP = 'class-swap'
    GRADUAL_ROTATION = 'gradual-rotation'
    IRREGULAR = 'irregular'


class ClassifierKind(enum.Enum):
    CENTROID = 'centroid'
    KNN = 'knn'
    SVM = 'svm'
    MLP = 'mlp'


class Mode(enum.Enum):
    """Training regimes, in report column order"""

    ALL = 'all'
    SAME = 'same'
    PREV = 'prev'
    UNSUP = 'unsup'
    SEMI = 'semi'
    UNSUP_UNB = 'unsup_unb'
    SEMI_UNB = 'semi_unb'
    SEMI_UNB_CLST = 'semi_unb_clst'

    @property
    def aligned(self) -> bool:
        return self not in (Mode.ALL, Mode.SAME, Mode.PREV)

    @property
    def unbounded(self) -> bool:
        return self in (Mode.UNSUP_UNB, Mode.SEMI_UNB, Mode.SEMI_UNB_CLST)

    @property
    def supervised(self) -> bool:
        return self in (Mode.SEMI, Mode.SEMI_UNB, Mode.SEMI_UNB_CLST)


def _rows(array: np.ndarray) -> int:
    return np.shape(array)[0]


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    components: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray

    @property
    def ambient_dim(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True, eq=False)
class AlignmentTransform:
    m: np.ndarray


@dataclass(frozen=True, eq=False)
class DomainData:
    """One time-step's samples, optionally annotated"""

    x: np.ndarray
    sample_ids: np.ndarray
    labels: Optional[np.ndarray] = None
    cluster_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        assert np.ndim(self.x) == 2

        n = _rows(self.x)
        for name in ('sample_ids', 'labels', 'cluster_ids'):
            value = getattr(self, name)
            if value is not None and _rows(value) != n:
                raise errors.LengthMismatch(
                    f"{name} has {_rows(value)} rows, x has {n}"
                )

        if len(set(self.sample_ids.tolist())) != n:
            raise errors.DuplicateId("sample_ids must be unique within a domain")

    @property
    def n(self) -> int:
        return _rows(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SeedSet:
    entries: Tuple[Tuple[str, Label], ...]

    @property
    def ids(self) -> List[str]:
        return [sample_id for sample_id, _ in self.entries]

    @property
    def labels(self) -> List[Label]:
        return [label for _, label in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class GroupAssignment:
    keys: List[GroupKey]
    roster: Dict[GroupKey, np.ndarray]
    dims: Dict[GroupKey, int]


@dataclass(frozen=True, eq=False)
class GroupTransform:
    """
    Alignment of one group. Bases and transform are absent for groups too small
    to fit a subspace on either side; those are aligned by their means alone.
    """

    source_mean: np.ndarray
    target_mean: np.ndarray
    source_basis: Optional[SubspaceBasis] = None
    target_basis: Optional[SubspaceBasis] = None
    transform: Optional[AlignmentTransform] = None


@dataclass(frozen=True, eq=False)
class AlignedPair:
    source_coords: np.ndarray
    target_coords: np.ndarray
    source_labels: Optional[np.ndarray]
    target_labels: Optional[np.ndarray]
    target_seed_mask: np.ndarray
    basis: SubspaceBasis
    transforms: Dict[GroupKey, GroupTransform] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.basis.dim


@dataclass(frozen=True, eq=False)
class JointSpace:
    level: int
    covered_steps: Tuple[int, ...]
    coords: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    seed_mask: np.ndarray
    cluster_ids: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return _rows(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True, eq=False)
class AlignmentTree:
    levels: List[List[JointSpace]]

    @property
    def root(self) -> JointSpace:
        (root,) = self.levels[-1]
        return root


@dataclass(frozen=True, eq=False)
class LabeledSet:
    coords: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if _rows(self.coords) != _rows(self.labels):
            raise errors.LengthMismatch(
                f"{_rows(self.coords)} coordinate rows, {_rows(self.labels)} labels"
            )

    @property
    def classes(self) -> List[Label]:
        return sorted(set(self.labels.tolist()))


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    kind: ClassifierKind
    classes: List[Label]
    dim: int


@dataclass(frozen=True, eq=False)
class CentroidModel(ClassifierModel):
    centroids: np.ndarray


@dataclass(frozen=True, eq=False)
class KnnModel(ClassifierModel):
    coords: np.ndarray
    labels: np.ndarray
    k: int


@dataclass(frozen=True, eq=False)
class SvmModel(ClassifierModel):
    """One-vs-rest RBF machines, one per class, in `classes` order"""

    machines: List[SVC]
    coords: np.ndarray
    labels: np.ndarray
    c: float
    gamma: float


@dataclass(frozen=True, eq=False)
class MlpModel(ClassifierModel):
    params: Dict[str, np.ndarray]

    @property
    def hidden(self) -> int:
        return self.params['w1'].shape[1]


@dataclass(eq=False)
class EmbeddingRecord:
    id: str
    step: int
    split: Split
    label: Optional[Label]
    vector: np.ndarray


@dataclass
class Manifest:
    dimension: int
    steps: Dict[int, str]
    labels: List[Label]


@dataclass(eq=False)
class Corpus:
    records: List[EmbeddingRecord]
    manifest: Manifest

    @property
    def steps(self) -> List[int]:
        return sorted(self.manifest.steps)

    def select(
        self,
        *,
        steps: Optional[Sequence[int]] = None,
        splits: Optional[Sequence[Split]] = None,
        labeled: Optional[bool] = None,
    ) -> List[EmbeddingRecord]:
        return [
            record
            for record in self.records
            if (steps is None or record.step in steps)
            and (splits is None or record.split in splits)
            and (labeled is None or (record.label is not None) == labeled)
        ]


def stack(records: Sequence[EmbeddingRecord]) -> Tuple[np.ndarray, ...]:
    """Stack records into (ids, vectors, labels) arrays"""
    ids = np.array([record.id for record in records], dtype=object)
    labels = np.array([record.label for record in records], dtype=object)
    if records:
        x = np.vstack([record.vector for record in records]).astype(float)
    else:
        x = np.empty((0, 0))
    return ids, x, labels


@dataclass
class SynthConfig:
    preset: Preset = Preset.CLASS_SWAP
    dimension: int = 16
    classes: int = 2
    per_class: int = 200
    steps: int = 4
    separation: float = 10.0
    noise: float = 1.0
    drift: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ('dimension', 'classes', 'per_class', 'steps'):
            if getattr(self, name) < 1:
                raise errors.InvalidConfig(f"{name} must be positive")
        if self.separation <= 0 or self.noise <= 0:
            raise errors.InvalidConfig("separation and noise must be positive")
        if self.drift < 0:
            raise errors.InvalidConfig("drift must be non-negative")
        if self.classes > self.dimension:
            raise errors.InvalidConfig("classes cannot exceed dimension")
        if self.preset is Preset.CLASS_SWAP and self.classes < 2:
            raise errors.InvalidConfig("class-swap needs at least two classes")
        if self.preset is Preset.GRADUAL_ROTATION and self.dimension < 2:
            raise errors.InvalidConfig("gradual-rotation needs dimension >= 2")


@dataclass
class RunConfig:
    dim: int = 100
    seeds_per_class: int = 10
    classifier: ClassifierKind = ClassifierKind.SVM
    modes: List[Mode] = field(default_factory=lambda: list(Mode))
    rng_seed: int = 0
    clusters: int = 5
    oversample: bool = False
    all_includes_future: bool = False
    pseudo_label_iterations: int = 1
    eval_split: Split = Split.TEST
    knn_k: int = 1
    svm_c: float = 1.0
    svm_gamma: Optional[float] = None
    mlp_hidden: int = 200
    mlp_epochs: int = 5
    mlp_batch: int = 32
    mlp_lr: float = 1e-3
    jobs: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise errors.InvalidConfig("dim must be at least 1")
        if self.seeds_per_class < 1:
            raise errors.InvalidConfig("seeds_per_class must be at least 1")
        if self.clusters < 1:
            raise errors.InvalidConfig("clusters must be at least 1")
        if self.pseudo_label_iterations < 1:
            raise errors.InvalidConfig("pseudo_label_iterations must be at least 1")
        if not self.modes:
            raise errors.InvalidConfig("at least one mode is required")


@dataclass
class MetricCell:
    accuracy: float
    macro_f1: float
    per_class_f1: Dict[Label, float]
    support: Dict[Label, int]
    n_train: int = 0
    n_eval: int = 0


@dataclass
class Report:
    steps: Dict[int, str]
    modes: List[Mode]
    cells: Dict[Tuple[int, Mode], MetricCell]
    averages: Dict[Mode, Dict[str, float]]
    provenance: Dict[str, object]


@dataclass
class SweepPoint:
    m: int
    mean: float
    lower: float
    upper: float
    std: float
    values: List[float]
