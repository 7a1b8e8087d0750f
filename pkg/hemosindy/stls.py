"""
Sequentially thresholded least squares
======================================

Solves ``d2p = Theta @ xi`` for a sparse ``xi``: an ordinary least-squares
solve is followed by repeated elimination of coefficients smaller than the
threshold and re-solving on the surviving terms, until nothing changes.

"""

import logging
import time
import typing

import numpy
from scipy import linalg

from hemosindy import errors, library, models, utils

LOGGER = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
LINEAR_TERMS = ((0, 1, 0), (1, 0, 0), (0, 0, 1))


def least_squares(
    theta: models.DesignMatrix, active: numpy.ndarray | None = None
) -> numpy.ndarray:
    """Solve the least-squares problem on the active columns.

    Columns are scaled to unit norm and factorized with a column-pivoted QR
    decomposition. A column is treated as dependent when its pivot falls
    below ``RANK_TOLERANCE`` times the largest scaled column norm.

    Args:
        theta: The design matrix and target
        active: Boolean mask of the columns to use, all when omitted

    Returns:
        Coefficients for every library term, zero for inactive terms

    Raises:
        errors.ParameterError: when no column is active
        errors.SingularMatrixError: when the active columns are rank
            deficient

    """
    rows, count = theta.shape
    if active is None:
        active = numpy.ones(count, dtype=bool)
    indices = numpy.flatnonzero(active)
    if indices.size == 0:
        raise errors.ParameterError('Least squares needs an active term')
    names = [theta.terms.names[offset] for offset in indices]
    matrix = theta.columns[:, indices]
    norms = numpy.linalg.norm(matrix, axis=0)
    if numpy.any(norms == 0.0):
        raise errors.SingularMatrixError(
            [
                name
                for name, norm in zip(names, norms, strict=True)
                if norm == 0.0
            ]
        )
    q, r, permutation = linalg.qr(
        matrix / norms, mode='economic', pivoting=True
    )
    pivots = numpy.abs(numpy.diag(r))
    rank = int(numpy.count_nonzero(pivots >= RANK_TOLERANCE * pivots[0]))
    if rank < indices.size:
        dependent = [names[offset] for offset in permutation[rank:]]
        LOGGER.debug(
            'Rank %i < %i, dependent: %s', rank, indices.size, dependent
        )
        raise errors.SingularMatrixError(dependent)
    scaled = numpy.empty(indices.size)
    scaled[permutation] = linalg.solve_triangular(r, q.T @ theta.target)
    coefficients = numpy.zeros(count)
    coefficients[indices] = scaled / norms
    return coefficients


def residual_norm(
    theta: models.DesignMatrix, coefficients: numpy.ndarray
) -> float:
    """Return the L2 norm of ``target - Theta @ coefficients``"""
    return float(
        numpy.linalg.norm(theta.target - theta.columns @ coefficients)
    )


def _magnitudes(
    theta: models.DesignMatrix, coefficients: numpy.ndarray, normalize: bool
) -> numpy.ndarray:
    magnitude = numpy.abs(coefficients)
    if normalize:
        target = numpy.linalg.norm(theta.target) or 1.0
        magnitude = magnitude * numpy.linalg.norm(theta.columns, axis=0)
        magnitude = magnitude / target
    return magnitude


def stls_fit(
    theta: models.DesignMatrix,
    eta: float,
    exempt: typing.Iterable[int] = (),
    normalize: bool = False,
) -> models.SparseModel:
    """Fit a sparse model by sequentially thresholded least squares.

    Args:
        theta: The design matrix and target
        eta: Sparsity threshold, compared against raw coefficient
            magnitudes
        exempt: Term indices that are never thresholded
        normalize: Compare ``|xi_j| * |Theta_j| / |target|`` against
            ``eta`` instead of the raw magnitude

    Returns:
        The fixed-point model. When every term is eliminated the model is
        empty (``active_count == 0``) rather than an error.

    Raises:
        errors.ParameterError: when ``eta`` is negative
        errors.SingularMatrixError: when an active subset is rank deficient

    """
    if not eta >= 0.0:
        raise errors.ParameterError(f'Threshold must be >= 0, got {eta}')
    count = len(theta.terms)
    exempt = tuple(sorted(set(exempt)))
    if any(not 0 <= offset < count for offset in exempt):
        raise errors.ParameterError(
            f'Exempt indices out of range: {exempt}'
        )
    protected = numpy.zeros(count, dtype=bool)
    protected[list(exempt)] = True
    active = numpy.ones(count, dtype=bool)
    coefficients = least_squares(theta, active)
    iterations = 1
    while True:
        small = (
            active
            & ~protected
            & (_magnitudes(theta, coefficients, normalize) < eta)
        )
        if not small.any():
            break
        active &= ~small
        if not active.any():
            LOGGER.debug('All terms eliminated at eta=%g', eta)
            coefficients = numpy.zeros(count)
            break
        coefficients = least_squares(theta, active)
        iterations += 1
        LOGGER.debug(
            'Pass %i kept %i terms, residual %g',
            iterations,
            active.sum(),
            residual_norm(theta, coefficients),
        )
    coefficients = numpy.where(active, coefficients, 0.0)
    return models.SparseModel(
        coefficients=coefficients,
        terms=theta.terms,
        threshold=eta,
        iterations=iterations,
        residual_norm=residual_norm(theta, coefficients),
        active_count=int(numpy.count_nonzero(coefficients)),
        exempt=exempt,
        normalized=normalize,
    )


def threshold_sweep(
    theta: models.DesignMatrix,
    etas: typing.Sequence[float],
    threads: int = 1,
    **kwargs: typing.Any,
) -> list[models.SparseModel]:
    """Fit one model per threshold, returned in the order of ``etas``.

    Active-term counts are reported as fitted; they are not forced to be
    monotone in the threshold.

    """
    if not etas:
        raise errors.ParameterError('A sweep needs at least one threshold')
    for eta in etas:
        if not eta >= 0.0:
            raise errors.ParameterError(f'Threshold must be >= 0, got {eta}')
    fits = utils.run_parallel(
        lambda eta: stls_fit(theta, eta, **kwargs), list(etas), threads
    )
    for fit in fits:
        if fit.is_empty:
            LOGGER.warning(
                'Threshold %g eliminated every term', fit.threshold
            )
    return fits


def extract_linear(model: models.SparseModel) -> models.LinearParams:
    """Read the oscillator parameters off a ``{dp, p, v}`` model.

    Raises:
        errors.ModelStructureError: when the active set is anything other
            than exactly ``{dp, p, v}``

    """
    active = {
        term.as_triple()
        for term, keep in zip(model.terms.terms, model.active, strict=True)
        if keep
    }
    if active != set(LINEAR_TERMS):
        raise errors.ModelStructureError(
            'Not a linear oscillator model', model.active_terms
        )
    return models.LinearParams(
        a=-model.coefficient(0, 1, 0),
        b=-model.coefficient(1, 0, 0),
        epsilon=model.coefficient(0, 0, 1),
    )


def linear_model(params: models.LinearParams) -> models.SparseModel:
    """Express oscillator parameters as a model over the linear library"""
    coefficients = numpy.array([-params.a, -params.b, params.epsilon])
    return models.SparseModel(
        coefficients=coefficients,
        terms=library.linear_library(),
        threshold=0.0,
        iterations=0,
        residual_norm=0.0,
        active_count=int(numpy.count_nonzero(coefficients)),
    )


def _check_terms(
    model: models.SparseModel, theta: models.DesignMatrix
) -> None:
    if model.terms.serialize_terms() != theta.terms.serialize_terms():
        raise errors.InputError('Model and design matrix libraries differ')


def predict_derivative(
    model: models.SparseModel, theta: models.DesignMatrix
) -> numpy.ndarray:
    """Evaluate the model's right-hand side on the design-matrix rows"""
    _check_terms(model, theta)
    return theta.columns @ model.coefficients


def derivative_fit_error(
    model: models.SparseModel, theta: models.DesignMatrix
) -> float:
    """RMS difference between predicted and finite-difference ``d2p``"""
    residual = theta.target - predict_derivative(model, theta)
    return float(numpy.sqrt(numpy.mean(residual**2)))


def coefficient_summary(
    fits: typing.Sequence[models.SparseModel],
) -> list[models.TermSummary]:
    """Summarize coefficients per term across a group of models

    Raises:
        errors.InputError: when the group is empty or mixes libraries

    """
    if not fits:
        raise errors.InputError('Cannot summarize an empty group')
    names = fits[0].terms.names
    if any(fit.terms.names != names for fit in fits):
        raise errors.InputError('Models in a group must share a library')
    stacked = numpy.vstack([fit.coefficients for fit in fits])
    return [
        models.TermSummary(
            term=name,
            mean=float(stacked[:, offset].mean()),
            std=float(stacked[:, offset].std()),
            active_fraction=float(numpy.mean(stacked[:, offset] != 0.0)),
        )
        for offset, name in enumerate(names)
    ]


def bench_fit(
    theta: models.DesignMatrix,
    eta: float,
    runs: int = 7,
    iterations: int = 1000,
) -> models.BenchReport:
    """Time repeated fits.

    Each run executes ``iterations`` complete :func:`stls_fit` calls and is
    timed as a whole. Fitted coefficients are discarded, but the last model
    of every run is compared with the others.

    Raises:
        errors.ParameterError: when ``runs`` or ``iterations`` is below 1

    """
    if runs < 1 or iterations < 1:
        raise errors.ParameterError('runs and iterations must be >= 1')
    seconds: list[float] = []
    results: list[numpy.ndarray] = []
    for _run in range(runs):
        started = time.perf_counter()
        for _iteration in range(iterations):
            fit = stls_fit(theta, eta)
        seconds.append(time.perf_counter() - started)
        results.append(fit.coefficients)
    consistent = all(
        numpy.array_equal(results[0], other) for other in results[1:]
    )
    if not consistent:
        LOGGER.warning('Benchmark runs produced different coefficients')
    timings = numpy.array(seconds)
    return models.BenchReport(
        seconds=seconds,
        iterations=iterations,
        mean=float(timings.mean()),
        std=float(timings.std()),
        median=float(numpy.median(timings)),
        consistent=consistent,
    )
