"""
Softmax classification of oscillator parameters
===============================================

A three-class linear softmax model over the bias-extended features
``[1, a, b, epsilon]``. Features are standardized with training-set
statistics and weights are fitted by L-BFGS-B with an analytic gradient.

"""

import importlib.resources
import logging
import math
import pathlib
import typing

import numpy
import pandas
import pydantic
from scipy import optimize, special

from hemosindy import errors, models, signal, utils

LOGGER = logging.getLogger(__name__)

CLASSES = len(models.ClassLabel)
FEATURES = ('a', 'b', 'epsilon')
GRADIENT_TOLERANCE = 1e-8
MAX_REDRAWS = 100
PLANES = {'ab': 'epsilon', 'ea': 'b', 'eb': 'a'}
REFERENCE_DATA = 'data/reference-parameters.csv'


def _one_hot(labels: typing.Sequence[models.ClassLabel]) -> numpy.ndarray:
    encoded = numpy.zeros((len(labels), CLASSES))
    encoded[numpy.arange(len(labels)), [int(label) for label in labels]] = 1
    return encoded


def _penalty_mask() -> numpy.ndarray:
    mask = numpy.ones((CLASSES, len(FEATURES) + 1))
    mask[:, 0] = 0.0
    return mask


def objective_and_gradient(
    weights: numpy.ndarray,
    features: numpy.ndarray,
    targets: numpy.ndarray,
    objective: models.Objective = models.Objective.MULTINOMIAL,
    regularization_l2: float = 1e-2,
) -> tuple[float, numpy.ndarray]:
    """Return the training loss and its gradient with respect to weights.

    The loss is the negative log-likelihood plus
    ``regularization_l2 / 2`` times the squared norm of the non-bias
    weights, so maximizing the likelihood means minimizing this value.

    Args:
        weights: Weights of shape (3, 4), or flattened
        features: Bias-extended feature rows of shape (n, 4)
        targets: One-hot labels of shape (n, 3)
        objective: ``MULTINOMIAL`` sums ``y * ln P``;
            ``PER_CLASS_BERNOULLI`` sums ``y * ln P + (1 - y) * ln(1 - P)``
            over every class
        regularization_l2: Penalty strength, the bias column is exempt

    Returns:
        The loss and a gradient of the same shape as ``weights``

    """
    shape = numpy.shape(weights)
    matrix = numpy.reshape(weights, (CLASSES, -1))
    logits = features @ matrix.T
    log_p = special.log_softmax(logits, axis=1)
    probabilities = numpy.exp(log_p)
    if objective == models.Objective.MULTINOMIAL:
        loss = -float(numpy.sum(targets * log_p))
        gradient_logits = probabilities - targets
    else:
        # ln(1 - P_m) as the log-sum of the other classes' probabilities
        log_rest = numpy.column_stack(
            [
                special.logsumexp(numpy.delete(log_p, m, axis=1), axis=1)
                for m in range(CLASSES)
            ]
        )
        loss = -float(
            numpy.sum(targets * log_p + (1.0 - targets) * log_rest)
        )
        scaled = -targets + (1.0 - targets) * numpy.exp(log_p - log_rest)
        gradient_logits = scaled - probabilities * scaled.sum(
            axis=1, keepdims=True
        )
    penalized = matrix * _penalty_mask()
    loss += 0.5 * regularization_l2 * float(numpy.sum(penalized**2))
    gradient = gradient_logits.T @ features + regularization_l2 * penalized
    return loss, gradient.reshape(shape)


def _scaling(features: numpy.ndarray) -> models.FeatureScaling:
    raw = features[:, 1:]
    scale = raw.std(axis=0)
    return models.FeatureScaling(
        mean=raw.mean(axis=0), scale=numpy.where(scale > 0, scale, 1.0)
    )


def _stack(data: typing.Sequence[models.FeatureVector]) -> numpy.ndarray:
    return numpy.vstack([item.x for item in data])


def train(
    data: typing.Sequence[models.FeatureVector],
    objective: models.Objective = models.Objective.MULTINOMIAL,
    regularization_l2: float = 1e-2,
    max_iterations: int = 1000,
    initial_weights: numpy.ndarray | None = None,
) -> models.ClassifierModel:
    """Fit the softmax weights on a labeled feature set.

    Raises:
        errors.DegenerateTrainingError: when fewer than two classes are
            present
        errors.ParameterError: when the penalty or budget is invalid

    """
    if regularization_l2 < 0 or max_iterations < 1:
        raise errors.ParameterError(
            'regularization_l2 must be >= 0 and max_iterations >= 1'
        )
    labels = [item.label for item in data]
    if len(set(labels)) < 2:
        raise errors.DegenerateTrainingError(
            f'Training needs at least two classes, got {sorted(set(labels))}'
        )
    raw = _stack(data)
    scaling = _scaling(raw)
    features = scaling.apply(raw)
    targets = _one_hot(labels)
    start = (
        numpy.zeros((CLASSES, raw.shape[1]))
        if initial_weights is None
        else numpy.asarray(initial_weights, dtype=numpy.float64)
    )
    result = optimize.minimize(
        objective_and_gradient,
        start.ravel(),
        args=(features, targets, objective, regularization_l2),
        jac=True,
        method='L-BFGS-B',
        options={'maxiter': max_iterations, 'gtol': GRADIENT_TOLERANCE},
    )
    if not result.success:
        LOGGER.warning('Classifier did not converge: %s', result.message)
    LOGGER.debug(
        'Trained on %i rows in %i iterations, loss %g',
        len(data),
        result.nit,
        result.fun,
    )
    return models.ClassifierModel(
        weights=result.x.reshape(CLASSES, -1),
        scaling=scaling,
        objective=objective,
        regularization_l2=regularization_l2,
        converged=bool(result.success),
        iterations=int(result.nit),
    )


def _logits(
    model: models.ClassifierModel, features: numpy.ndarray
) -> numpy.ndarray:
    return model.scaling.apply(features) @ model.weights.T


def softmax_probabilities(
    model: models.ClassifierModel,
    x: models.FeatureVector | numpy.ndarray,
) -> numpy.ndarray:
    """Class probabilities for one feature vector or a stack of them"""
    features = x.x if isinstance(x, models.FeatureVector) else x
    return special.softmax(_logits(model, features), axis=-1)


def predict_many(
    model: models.ClassifierModel, features: numpy.ndarray
) -> numpy.ndarray:
    """Most probable class index per row; ties go to the lowest index"""
    return numpy.argmax(_logits(model, features), axis=-1)


def predict(
    model: models.ClassifierModel, x: models.FeatureVector
) -> models.ClassLabel:
    return models.ClassLabel(int(predict_many(model, x.x)))


def accuracy(
    model: models.ClassifierModel,
    data: typing.Sequence[models.FeatureVector],
) -> float:
    """Fraction of correctly predicted rows"""
    if not data:
        raise errors.InputError('Cannot score an empty dataset')
    predicted = predict_many(model, _stack(data))
    expected = numpy.array([int(item.label) for item in data])
    return float(numpy.mean(predicted == expected))


def _stratified_test(
    labels: numpy.ndarray, test_size: int, rng: numpy.random.Generator
) -> numpy.ndarray:
    classes, counts = numpy.unique(labels, return_counts=True)
    quotas = test_size * counts / labels.size
    taken = numpy.floor(quotas).astype(int)
    # largest remainders first, lower class index on ties
    order = numpy.argsort(-(quotas - taken), kind='stable')
    taken[order[: test_size - int(taken.sum())]] += 1
    chosen = [
        rng.choice(numpy.flatnonzero(labels == label), size=k, replace=False)
        for label, k in zip(classes, taken, strict=True)
    ]
    return numpy.sort(numpy.concatenate(chosen))


def _draw_partition(
    labels: numpy.ndarray,
    test_size: int,
    stratified: bool,
    rng: numpy.random.Generator,
) -> numpy.ndarray:
    for _attempt in range(MAX_REDRAWS):
        if stratified:
            test = _stratified_test(labels, test_size, rng)
        else:
            test = numpy.sort(rng.permutation(labels.size)[:test_size])
        if numpy.unique(numpy.delete(labels, test)).size >= 2:
            return test
    raise errors.DegenerateTrainingError(
        f'No partition with two training classes in {MAX_REDRAWS} draws'
    )


def evaluate_partitions(
    data: typing.Sequence[models.FeatureVector],
    n_partitions: int = 100,
    train_fraction: float = 0.8,
    seed: int = 0,
    stratified: bool = True,
    objective: models.Objective = models.Objective.MULTINOMIAL,
    regularization_l2: float = 1e-2,
    max_iterations: int = 1000,
    threads: int = 1,
) -> models.PartitionReport:
    """Score fresh models on repeated random train/test partitions.

    All partitions are drawn up front from one seeded generator, so the
    report does not depend on ``threads``. ``std`` is the standard error
    of the mean accuracy and ``spread`` the sample standard deviation of
    the individual accuracies.

    Raises:
        errors.ParameterError: for an invalid partition count, training
            fraction or dataset size
        errors.DegenerateTrainingError: when a partition keeps drawing a
            single-class training set

    """
    if n_partitions < 1:
        raise errors.ParameterError('n_partitions must be >= 1')
    if not 0.0 < train_fraction < 1.0:
        raise errors.ParameterError('train_fraction must lie in (0, 1)')
    if len(data) < 5:
        raise errors.ParameterError(
            f'Partition evaluation needs >= 5 rows, got {len(data)}'
        )
    train_size = round(len(data) * train_fraction)
    test_size = len(data) - train_size
    if train_size < 1 or test_size < 1:
        raise errors.ParameterError(
            f'train_fraction {train_fraction} leaves an empty subset'
        )
    labels = numpy.array([int(item.label) for item in data])
    rng = numpy.random.default_rng(seed)
    partitions = [
        _draw_partition(labels, test_size, stratified, rng)
        for _partition in range(n_partitions)
    ]

    def score(test: numpy.ndarray) -> float:
        held_out = set(test.tolist())
        model = train(
            [item for i, item in enumerate(data) if i not in held_out],
            objective,
            regularization_l2,
            max_iterations,
        )
        return accuracy(model, [data[i] for i in test])

    accuracies = numpy.array(utils.run_parallel(score, partitions, threads))
    spread = float(accuracies.std(ddof=1)) if n_partitions > 1 else 0.0
    LOGGER.info(
        'Mean accuracy %.3f over %i partitions of %i/%i',
        accuracies.mean(),
        n_partitions,
        train_size,
        test_size,
    )
    return models.PartitionReport(
        accuracies=accuracies,
        mean=float(accuracies.mean()),
        std=spread / math.sqrt(n_partitions),
        spread=spread,
        seed=seed,
        train_size=train_size,
        test_size=test_size,
        stratified=stratified,
    )


def feature_ranges(
    data: typing.Sequence[models.FeatureVector], margin: float = 0.1
) -> list[tuple[float, float]]:
    """Per-feature ``(low, high)`` covering the data plus a relative margin"""
    raw = _stack(data)[:, 1:]
    low, high = raw.min(axis=0), raw.max(axis=0)
    pad = margin * numpy.where(high > low, high - low, 1.0)
    return [
        (float(lo), float(hi))
        for lo, hi in zip(low - pad, high + pad, strict=True)
    ]


def decision_regions(
    model: models.ClassifierModel,
    ranges: typing.Sequence[tuple[float, float]],
    resolution: int | typing.Sequence[int],
    fixed: dict[str, float] | None = None,
) -> models.DecisionGrid:
    """Predict the class at every node of a regular ``(a, b, epsilon)`` grid.

    Args:
        model: Trained classifier
        ranges: ``(low, high)`` per feature, in ``a, b, epsilon`` order
        resolution: Nodes per axis, a single value or one per feature
        fixed: Coordinates pinned to a single value, keyed by feature
            name; pinned axes ignore their range and resolution

    Raises:
        errors.ParameterError: when a varying axis has fewer than two
            nodes or the ranges are malformed

    """
    fixed = fixed or {}
    if len(ranges) != len(FEATURES):
        raise errors.ParameterError('Expected a range for a, b and epsilon')
    unknown = set(fixed) - set(FEATURES)
    if unknown:
        raise errors.ParameterError(f'Unknown features: {sorted(unknown)}')
    counts = (
        [resolution] * len(FEATURES)
        if isinstance(resolution, int)
        else list(resolution)
    )
    axes = []
    for name, (low, high), count in zip(FEATURES, ranges, counts, strict=True):
        if name in fixed:
            axes.append(numpy.array([fixed[name]], dtype=numpy.float64))
            continue
        if count < 2 or not high > low:
            raise errors.ParameterError(
                f'Axis {name} needs >= 2 nodes over a non-empty range'
            )
        axes.append(numpy.linspace(low, high, count))
    mesh = numpy.meshgrid(*axes, indexing='ij')
    points = numpy.column_stack([axis.ravel() for axis in mesh])
    features = numpy.column_stack([numpy.ones(len(points)), points])
    labels = predict_many(model, features)
    return models.DecisionGrid(
        points=points,
        labels=tuple(models.ClassLabel(int(label)) for label in labels),
    )


def slice_regions(
    model: models.ClassifierModel,
    data: typing.Sequence[models.FeatureVector],
    plane: str,
    resolution: int = 50,
    margin: float = 0.1,
) -> models.DecisionGrid:
    """2-D decision regions with the omitted feature at its dataset mean.

    ``plane`` is ``ab`` (epsilon fixed), ``ea`` (b fixed) or ``eb``
    (a fixed).

    """
    if plane not in PLANES:
        raise errors.ParameterError(
            f'Unknown plane {plane!r}, expected one of {", ".join(PLANES)}'
        )
    omitted = PLANES[plane]
    mean = float(_stack(data)[:, 1 + FEATURES.index(omitted)].mean())
    grid = decision_regions(
        model,
        feature_ranges(data, margin),
        resolution,
        fixed={omitted: mean},
    )
    return grid.model_copy(update={'plane': plane, 'fixed': mean})


def regions_frame(grid: models.DecisionGrid) -> pandas.DataFrame:
    frame = pandas.DataFrame(grid.points, columns=list(FEATURES))
    frame['class'] = [label.display_name for label in grid.labels]
    return frame


def write_regions(grid: models.DecisionGrid, path: pathlib.Path) -> None:
    """Export a grid as ``a, b, epsilon, class`` CSV"""
    regions_frame(grid).to_csv(
        path, index=False, float_format=signal.FLOAT_FORMAT
    )


def _parse_rows(
    frame: pandas.DataFrame, source: str
) -> list[models.FeatureVector]:
    missing = [
        column for column in (*FEATURES, 'label') if column not in frame
    ]
    if missing:
        raise errors.DataFileError(
            f'{source} lacks required columns: {", ".join(missing)}'
        )
    rows, problems = [], []
    for offset, record in enumerate(frame.to_dict('records')):
        line = offset + 2
        try:
            values = [float(record[name]) for name in FEATURES]
            rows.append(
                models.FeatureVector.from_params(
                    *values,
                    label=models.ClassLabel.parse(record['label']),
                    subject_id=str(record.get('subject_id', '') or ''),
                )
            )
        except (TypeError, ValueError, pydantic.ValidationError) as err:
            first = str(err).splitlines()[0]
            problems.append(f'line {line}: {first}')
    if problems:
        raise errors.InputError(
            f'{source} has malformed rows; ' + '; '.join(problems)
        )
    return rows


def read_features(path: pathlib.Path) -> list[models.FeatureVector]:
    """Read ``a, b, epsilon, label`` rows, one per subject.

    Labels are class names (``AA``, ``AVM``, ``Treated``) or indices.
    An optional ``subject_id`` column is carried along.

    Raises:
        errors.DataFileError: when the file cannot be read
        errors.InputError: listing every malformed line

    """
    try:
        frame = pandas.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, ValueError, pandas.errors.ParserError) as err:
        raise errors.DataFileError(f'Cannot read {path}: {err}') from err
    return _parse_rows(frame, str(path))


def load_reference_dataset() -> list[models.FeatureVector]:
    """The bundled table of oscillator parameters for twenty records.

    Five aneurysm (AA) and five arteriovenous malformation (AVM) subjects
    measured before surgery, labeled by pathology, and the same subjects
    after surgery, labeled Treated. Parameters are in the table's scaled
    units: ``a`` (1/s), ``b`` (1/s^2) and ``epsilon``.

    """
    resource = importlib.resources.files('hemosindy').joinpath(
        REFERENCE_DATA
    )
    with resource.open('r', encoding='utf-8') as handle:
        frame = pandas.read_csv(handle, dtype=str, keep_default_na=False)
    rows = _parse_rows(frame, REFERENCE_DATA)
    phases = frame['phase'].tolist()
    return [
        row.model_copy(update={'subject_id': f'{row.subject_id}/{phase}'})
        for row, phase in zip(rows, phases, strict=True)
    ]


def as_params(row: models.FeatureVector) -> models.LinearParams:
    """The oscillator parameters carried by a feature vector"""
    return models.LinearParams(
        a=float(row.x[1]), b=float(row.x[2]), epsilon=float(row.x[3])
    )
