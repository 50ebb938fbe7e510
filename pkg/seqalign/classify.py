"""
Downstream classifiers trained in a (joint) subspace frame.

All trainers take a LabeledSet and return an immutable model; `predict` works on
any of them. Stochastic trainers draw every random number from
numpy.random.default_rng(rng_seed).
"""
import logging

from typing import List, Tuple

import numpy as np

from scipy.spatial.distance import cdist
from sklearn.svm import SVC

from . import errors
from .types import (
    CentroidModel,
    ClassifierKind,
    ClassifierModel,
    KnnModel,
    Label,
    LabeledSet,
    MlpModel,
    RunConfig,
    SvmModel,
)

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

SVM_TOLERANCE = 1e-3


def _checked(labeled: LabeledSet) -> Tuple[np.ndarray, List[Label], np.ndarray]:
    """Training coordinates, sorted classes and per-row class indices"""
    coords = np.asarray(labeled.coords, dtype=float)
    assert coords.ndim == 2

    if not len(coords):
        raise errors.EmptyClass("training set is empty")
    if any(label is None for label in labeled.labels):
        raise errors.EmptyClass("training rows must be labeled")

    classes = labeled.classes
    if len(classes) < 2:
        raise errors.SingleClass(f"only {classes} present")

    index = {label: i for i, label in enumerate(classes)}
    return coords, classes, np.array([index[label] for label in labeled.labels])


def oversample(labeled: LabeledSet, rng_seed: int) -> LabeledSet:
    """
    Resample minority classes with replacement up to the majority class count

    Rows of the majority class are kept as they are; the output row order is a
    seeded permutation.

    :raises EmptyClass: if the set has no rows
    """
    if not len(labeled.labels):
        raise errors.EmptyClass("nothing to oversample")

    rng = np.random.default_rng(rng_seed)
    labels = np.asarray(labeled.labels, dtype=object)

    rows = {label: np.flatnonzero(labels == label) for label in labeled.classes}
    target = max(len(members) for members in rows.values())

    selected = []
    for label, members in rows.items():
        selected.append(members)
        if len(members) < target:
            extra = rng.choice(members, size=target - len(members), replace=True)
            selected.append(extra)

    order = rng.permutation(np.concatenate(selected))
    return LabeledSet(coords=np.asarray(labeled.coords)[order], labels=labels[order])


def fit_centroid(labeled: LabeledSet) -> CentroidModel:
    coords, classes, y = _checked(labeled)
    return CentroidModel(
        kind=ClassifierKind.CENTROID,
        classes=classes,
        dim=coords.shape[1],
        centroids=np.vstack([coords[y == i].mean(axis=0) for i in range(len(classes))]),
    )


def fit_knn(labeled: LabeledSet, k: int = 1) -> KnnModel:
    coords, classes, _ = _checked(labeled)
    if k < 1:
        raise errors.InvalidConfig(f"k must be at least 1, got {k}")

    return KnnModel(
        kind=ClassifierKind.KNN,
        classes=classes,
        dim=coords.shape[1],
        coords=coords,
        labels=np.asarray(labeled.labels, dtype=object),
        k=min(k, len(coords)),
    )


def auto_gamma(coords: np.ndarray) -> float:
    """1 / (d * mean feature variance), or 1 for constant data"""
    variance = coords.var(axis=0).mean()
    if variance <= 0:
        return 1.0
    return 1.0 / (coords.shape[1] * variance)


def fit_svm_rbf(
    labeled: LabeledSet,
    *,
    c: float = 1.0,
    gamma: float = None,
    rng_seed: int = 0,
    tol: float = SVM_TOLERANCE,
) -> SvmModel:
    """
    Train one-vs-rest RBF support vector machines

    Each binary machine is solved by libsvm's SMO solver to KKT tolerance `tol`,
    with at most 10 * n * #classes iterations. Rows are put in a canonical order
    first, so the result does not depend on the order of the training set.

    :param c: box constraint
    :param gamma: kernel width; None selects :func:`auto_gamma`

    :raises SingleClass: if fewer than two classes are present
    """
    coords, classes, y = _checked(labeled)
    if c <= 0:
        raise errors.InvalidConfig(f"C must be positive, got {c}")

    order = np.lexsort(np.vstack([y[None, :], coords.T[::-1]]))
    coords, y = coords[order], y[order]

    if gamma is None:
        gamma = auto_gamma(coords)

    max_iter = 10 * len(coords) * len(classes)
    machines = []
    for i, label in enumerate(classes):
        machine = SVC(
            C=c,
            kernel='rbf',
            gamma=gamma,
            tol=tol,
            max_iter=max_iter,
            random_state=rng_seed,
        )
        machines.append(machine.fit(coords, y == i))
        logger.debug("svm %r: %d support vector(s)", label, len(machine.support_))

    return SvmModel(
        kind=ClassifierKind.SVM,
        classes=classes,
        dim=coords.shape[1],
        machines=machines,
        coords=coords,
        labels=np.asarray(classes, dtype=object)[y],
        c=c,
        gamma=gamma,
    )


def dual_coefficients(model: SvmModel, label: Label) -> Tuple[np.ndarray, np.ndarray]:
    """Full-length α and ±1 targets of the machine separating `label` from the rest"""
    machine = model.machines[model.classes.index(label)]

    y = np.where(model.labels == label, 1.0, -1.0)
    alpha = np.zeros(len(y))
    alpha[machine.support_] = np.abs(machine.dual_coef_[0])
    return alpha, y


def kkt_gap(model: SvmModel, label: Label) -> float:
    """
    Maximal KKT violation of one binary machine at its returned solution

    Computed as max over I_up of -y_i g_i minus min over I_low of -y_i g_i, where
    g is the gradient of the dual objective.
    """
    alpha, y = dual_coefficients(model, label)
    kernel = np.exp(-model.gamma * cdist(model.coords, model.coords, 'sqeuclidean'))
    gradient = y * (kernel @ (alpha * y)) - 1.0

    up = ((y > 0) & (alpha < model.c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < model.c))

    score = -y * gradient
    return float(score[up].max() - score[low].min())


def init_mlp(dim: int, hidden: int, classes: int, rng: np.random.Generator) -> dict:
    params = {}
    for name, fan_in, fan_out in (('1', dim, hidden), ('2', hidden, classes)):
        bound = 1.0 / np.sqrt(fan_in)
        params['w' + name] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params['b' + name] = rng.uniform(-bound, bound, size=fan_out)
    return params


def _forward(params: dict, x: np.ndarray):
    pre = x @ params['w1'] + params['b1']
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params['w2'] + params['b2']
    logits = logits - logits.max(axis=1, keepdims=True)
    log_prob = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return pre, hidden, log_prob


def mlp_loss_and_gradients(params: dict, x: np.ndarray, y: np.ndarray):
    """
    Mean softmax cross-entropy of a batch and its gradient for every parameter

    :param params: w1, b1, w2, b2
    :param x: batch inputs
    :param y: class indices

    :returns: (loss, gradients keyed like params)
    """
    n = len(x)
    pre, hidden, log_prob = _forward(params, x)
    loss = -log_prob[np.arange(n), y].mean()

    delta = np.exp(log_prob)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    back = (delta @ params['w2'].T) * (pre > 0)
    return loss, {
        'w1': x.T @ back,
        'b1': back.sum(axis=0),
        'w2': hidden.T @ delta,
        'b2': delta.sum(axis=0),
    }


def fit_mlp(
    labeled: LabeledSet,
    *,
    hidden: int = 200,
    epochs: int = 5,
    batch: int = 32,
    lr: float = 1e-3,
    rng_seed: int = 0,
) -> MlpModel:
    """
    Train a one-hidden-layer ReLU network with a softmax output using Adam

    :param hidden: hidden layer width
    :param epochs: passes over the shuffled training set
    :param batch: mini-batch size
    :param lr: Adam step size
    :param rng_seed: seeds both initialization and shuffling

    :raises SingleClass: if fewer than two classes are present
    """
    coords, classes, y = _checked(labeled)
    if hidden < 1 or epochs < 1 or batch < 1 or lr <= 0:
        raise errors.InvalidConfig("hidden, epochs, batch and lr must be positive")

    rng = np.random.default_rng(rng_seed)
    params = init_mlp(coords.shape[1], hidden, len(classes), rng)
    first = {name: np.zeros_like(value) for name, value in params.items()}
    second = {name: np.zeros_like(value) for name, value in params.items()}

    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(coords))
        losses = []
        for start in range(0, len(order), batch):
            rows = order[start : start + batch]
            loss, gradients = mlp_loss_and_gradients(params, coords[rows], y[rows])
            losses.append(loss)

            step += 1
            for name, gradient in gradients.items():
                first[name] = ADAM_BETA1 * first[name] + (1 - ADAM_BETA1) * gradient
                second[name] = (
                    ADAM_BETA2 * second[name] + (1 - ADAM_BETA2) * gradient ** 2
                )
                corrected = first[name] / (1 - ADAM_BETA1 ** step)
                scale = second[name] / (1 - ADAM_BETA2 ** step)
                params[name] = params[name] - lr * corrected / (
                    np.sqrt(scale) + ADAM_EPSILON
                )

        logger.debug("mlp epoch %d: mean loss %.6f", epoch + 1, np.mean(losses))

    return MlpModel(
        kind=ClassifierKind.MLP, classes=classes, dim=coords.shape[1], params=params
    )


def decision_values(model: ClassifierModel, coords) -> np.ndarray:
    """Per-row, per-class scores; the predicted class is the first argmax"""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != model.dim:
        raise errors.DimensionMismatch(
            f"coordinates have shape {coords.shape}, model expects {model.dim} columns"
        )

    if isinstance(model, CentroidModel):
        return -cdist(coords, model.centroids)

    if isinstance(model, KnnModel):
        distances = cdist(coords, model.coords)
        nearest = np.argsort(distances, axis=1, kind='stable')[:, : model.k]
        votes = np.zeros((len(coords), len(model.classes)))
        index = {label: i for i, label in enumerate(model.classes)}
        for row, neighbours in enumerate(nearest):
            for neighbour in neighbours:
                votes[row, index[model.labels[neighbour]]] += 1
        return votes

    if isinstance(model, SvmModel):
        return np.column_stack(
            [machine.decision_function(coords) for machine in model.machines]
        )

    if isinstance(model, MlpModel):
        return _forward(model.params, coords)[2]

    raise TypeError(f"unsupported model {type(model).__name__}")


def predict(model: ClassifierModel, coords) -> np.ndarray:
    """
    Predict a label for every row

    :raises DimensionMismatch: if coords do not have the training column count
    """
    scores = decision_values(model, coords)
    if not len(scores):
        return np.empty(0, dtype=object)
    return np.asarray(model.classes, dtype=object)[np.argmax(scores, axis=1)]


def fit_classifier(
    labeled: LabeledSet, config: RunConfig, *, rng_seed: int
) -> ClassifierModel:
    """Train the classifier selected by a run configuration"""
    kind = config.classifier
    if kind is ClassifierKind.CENTROID:
        return fit_centroid(labeled)
    if kind is ClassifierKind.KNN:
        return fit_knn(labeled, config.knn_k)
    if kind is ClassifierKind.SVM:
        return fit_svm_rbf(
            labeled, c=config.svm_c, gamma=config.svm_gamma, rng_seed=rng_seed
        )
    if kind is ClassifierKind.MLP:
        return fit_mlp(
            labeled,
            hidden=config.mlp_hidden,
            epochs=config.mlp_epochs,
            batch=config.mlp_batch,
            lr=config.mlp_lr,
            rng_seed=rng_seed,
        )

    raise errors.InvalidConfig(f"unknown classifier {kind}")
