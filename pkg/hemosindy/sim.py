"""
Forward simulation and validation protocols
===========================================

Identified models are integrated as the first-order system
``(p, dp)' = (dp, sum_j xi_j * theta_j(p, dp, v(t)))`` with the classical
fourth-order Runge-Kutta scheme at a fixed sub-step of the sampling
interval. Forcing between samples is linearly interpolated.

"""

import logging
import math
import pathlib
import time
import typing

import numpy
import pandas
from scipy import ndimage
from scipy import signal as sp_signal

from hemosindy import errors, library, models, signal, stls, utils

LOGGER = logging.getLogger(__name__)

DEFAULT_SUBSTEPS = 4
DIVERGENCE_FACTOR = 1e12
CRITICAL_TOLERANCE = 1e-9
MIN_CYCLE_SEPARATION_S = 0.4
SMOOTHING_S = 0.05
PEAK_PROMINENCE = 0.25

Term = tuple[float, int, int, int]


def _active_terms(model: models.SparseModel) -> list[Term]:
    return [
        (float(value), term.p_exp, term.dp_exp, term.v_exp)
        for value, term in zip(
            model.coefficients, model.terms.terms, strict=True
        )
        if value != 0.0
    ]


def _acceleration(terms: list[Term], p: float, dp: float, v: float) -> float:
    return sum(
        value * p**p_exp * dp**dp_exp * v**v_exp
        for value, p_exp, dp_exp, v_exp in terms
    )


def simulate(
    model: models.SparseModel,
    forcing: models.TimeSeries,
    p0: float,
    dp0: float,
    substeps: int = DEFAULT_SUBSTEPS,
    reference_amplitude: float | None = None,
) -> models.TimeSeries:
    """Integrate a model forward over the forcing record.

    Args:
        model: The identified model
        forcing: Velocity record driving the model
        p0: Initial pressure
        dp0: Initial pressure rate of change
        substeps: Runge-Kutta steps per sampling interval
        reference_amplitude: Pressure scale for the divergence guard,
            ``|p0|`` when omitted

    Returns:
        Simulated pressure at the forcing's sample instants

    Raises:
        errors.ParameterError: when ``substeps`` is below 1 or the initial
            conditions are not finite
        errors.DivergenceError: when ``|p|`` exceeds ``1e12`` times the
            reference amplitude

    """
    if substeps < 1:
        raise errors.ParameterError(f'substeps must be >= 1, got {substeps}')
    if not (math.isfinite(p0) and math.isfinite(dp0)):
        raise errors.ParameterError('Initial conditions must be finite')
    amplitude = (
        abs(p0) if reference_amplitude is None else reference_amplitude
    )
    limit = DIVERGENCE_FACTOR * max(1.0, amplitude)
    terms = _active_terms(model)
    v = forcing.values.tolist()
    h = forcing.dt / substeps
    output = numpy.empty(len(forcing))
    output[0] = p = float(p0)
    dp = float(dp0)
    try:
        for sample in range(len(forcing) - 1):
            v_start, v_slope = v[sample], v[sample + 1] - v[sample]
            for step in range(substeps):
                v_0 = v_start + v_slope * step / substeps
                v_half = v_start + v_slope * (step + 0.5) / substeps
                v_1 = v_start + v_slope * (step + 1) / substeps
                k1_p, k1_dp = dp, _acceleration(terms, p, dp, v_0)
                k2_p = dp + 0.5 * h * k1_dp
                k2_dp = _acceleration(
                    terms, p + 0.5 * h * k1_p, k2_p, v_half
                )
                k3_p = dp + 0.5 * h * k2_dp
                k3_dp = _acceleration(
                    terms, p + 0.5 * h * k2_p, k3_p, v_half
                )
                k4_p = dp + h * k3_dp
                k4_dp = _acceleration(terms, p + h * k3_p, k4_p, v_1)
                p += h * (k1_p + 2.0 * k2_p + 2.0 * k3_p + k4_p) / 6.0
                dp += h * (k1_dp + 2.0 * k2_dp + 2.0 * k3_dp + k4_dp) / 6.0
            if not abs(p) <= limit or not math.isfinite(dp):
                raise errors.DivergenceError(
                    forcing.t0 + (sample + 1) * forcing.dt, p
                )
            output[sample + 1] = p
    except OverflowError as err:
        raise errors.DivergenceError(
            forcing.t0 + (sample + 1) * forcing.dt, math.inf
        ) from err
    return models.TimeSeries(values=output, dt=forcing.dt, t0=forcing.t0)


def rmse(reference: models.TimeSeries, simulated: models.TimeSeries) -> float:
    """Root mean squared difference of two aligned series

    Raises:
        errors.InputError: when the series lengths differ

    """
    if len(reference) != len(simulated):
        raise errors.InputError(
            f'Cannot compare {len(reference)} and {len(simulated)} samples'
        )
    difference = reference.values - simulated.values
    return float(numpy.sqrt(numpy.mean(difference**2)))


def initial_conditions(pressure: models.TimeSeries) -> tuple[float, float]:
    """Measured ``p(0)`` and the forward-difference estimate of ``dp(0)``"""
    values = pressure.values
    return float(values[0]), float((values[1] - values[0]) / pressure.dt)


def simulate_fit(
    pair: models.SignalPair,
    model: models.SparseModel,
    substeps: int = DEFAULT_SUBSTEPS,
) -> models.SimResult:
    """Simulate a model from the record's own initial conditions"""
    p0, dp0 = initial_conditions(pair.pressure)
    simulated = simulate(
        model,
        pair.velocity,
        p0,
        dp0,
        substeps,
        reference_amplitude=pair.pressure.amplitude,
    ).model_copy(update={'unit': pair.pressure.unit})
    return models.SimResult(
        simulated_pressure=simulated,
        rmse=rmse(pair.pressure, simulated),
        params_used=model,
    )


def sweep_report(
    pair: models.SignalPair,
    spec: models.LibrarySpec,
    etas: typing.Sequence[float],
    substeps: int = DEFAULT_SUBSTEPS,
    threads: int = 1,
    edge_rows: int = 0,
    **kwargs: typing.Any,
) -> list[models.SweepRow]:
    """Fit, time and simulate the record once per threshold.

    Rows are returned in the order of ``etas``. Empty models are reported
    with status ``empty`` and diverging ones with ``diverged``, both
    without an RMSE. ``edge_rows`` rows at both record ends, where the
    derivative stencils are one-sided, are left out of the fits.

    """
    theta = library.design_matrix_for(pair, spec, edge_rows)

    def evaluate(eta: float) -> models.SweepRow:
        started = time.perf_counter()
        model = stls.stls_fit(theta, eta, **kwargs)
        elapsed = time.perf_counter() - started
        status: typing.Literal['ok', 'empty', 'diverged'] = 'ok'
        error: float | None = None
        if model.is_empty:
            status = 'empty'
        else:
            try:
                error = simulate_fit(pair, model, substeps).rmse
            except errors.DivergenceError as err:
                LOGGER.warning('Model at eta=%g diverged: %s', eta, err)
                status = 'diverged'
        return models.SweepRow(
            eta=eta,
            active_terms=model.active_terms,
            rmse=error,
            derivative_error=stls.derivative_fit_error(model, theta),
            fit_seconds=elapsed,
            status=status,
            model=model,
        )

    return utils.run_parallel(evaluate, list(etas), threads)


def _relative_deviation(
    half: models.SparseModel, full: models.SparseModel
) -> list[float]:
    return [
        abs(part - whole) / abs(whole)
        for part, whole in zip(
            half.coefficients, full.coefficients, strict=True
        )
        if whole != 0.0
    ]


def split_half_reproducibility(
    pair: models.SignalPair,
    spec: models.LibrarySpec,
    eta: float,
    edge_rows: int = 2,
    **kwargs: typing.Any,
) -> models.ReproducibilityReport:
    """Compare fits on each half of a record with the fit on all of it.

    Derivatives are computed once over the complete record so the rows at
    the split point use interior stencils. ``edge_rows`` rows at both ends
    of the record are excluded from all three fits, fewer when that would
    leave less than six rows.

    Raises:
        errors.InputError: when the record has fewer than six samples
        errors.ParameterError: when ``edge_rows`` is negative

    """
    if len(pair) < 6:
        raise errors.InputError(
            f'Record of {len(pair)} samples is too short to split'
        )
    if edge_rows < 0:
        raise errors.ParameterError('edge_rows must be >= 0')
    if len(pair) - 2 * edge_rows < 6:
        edge_rows = (len(pair) - 6) // 2
        LOGGER.debug('Short record, dropping %i edge rows', edge_rows)
    theta = library.design_matrix_for(pair, spec)
    middle = len(pair) // 2
    end = len(pair) - edge_rows
    full = stls.stls_fit(theta.rows(edge_rows, end), eta, **kwargs)
    first = stls.stls_fit(theta.rows(edge_rows, middle), eta, **kwargs)
    second = stls.stls_fit(theta.rows(middle, end), eta, **kwargs)
    comparable = not (full.is_empty or first.is_empty or second.is_empty)
    first_half = _relative_deviation(first, full) if comparable else []
    second_half = _relative_deviation(second, full) if comparable else []
    if not comparable:
        LOGGER.warning('Split-half fit produced an empty model')
    return models.ReproducibilityReport(
        terms=full.active_terms,
        first_half=first_half,
        second_half=second_half,
        first_max=max(first_half) if first_half else None,
        second_max=max(second_half) if second_half else None,
        overall_max=max(first_half + second_half) if comparable else None,
        comparable=comparable,
        full=full,
        first=first,
        second=second,
    )


def detect_cycles(
    pressure: models.TimeSeries,
    min_separation_s: float = MIN_CYCLE_SEPARATION_S,
    smoothing_s: float = SMOOTHING_S,
    prominence: float = PEAK_PROMINENCE,
) -> list[int]:
    """Return cardiac-cycle boundaries as systolic peak indices.

    Peaks are local maxima of the pressure, smoothed by a centered moving
    average over an odd number of samples close to ``smoothing_s``, that are
    at least ``min_separation_s`` apart and stand out by ``prominence``
    times the peak-to-peak range.

    """
    if min_separation_s <= 0 or smoothing_s < 0 or prominence < 0:
        raise errors.ParameterError('Invalid cycle detection parameters')
    window = 2 * round(0.5 * smoothing_s / pressure.dt) + 1
    smoothed = ndimage.uniform_filter1d(
        pressure.values, size=window, mode='nearest'
    )
    peaks, _properties = sp_signal.find_peaks(
        smoothed,
        distance=max(1, round(min_separation_s / pressure.dt)),
        prominence=prominence * float(numpy.ptp(smoothed)),
    )
    LOGGER.debug('Detected %i cycle boundaries', len(peaks))
    return [int(peak) for peak in peaks]


def _window_rmse(
    pair: models.SignalPair,
    model: models.SparseModel,
    start: int,
    stop: int,
    substeps: int,
) -> float:
    window = pair.window(start, stop)
    return simulate_fit(window, model, substeps).rmse


def forecast(
    pair: models.SignalPair,
    train_cycles: int,
    spec: models.LibrarySpec,
    eta: float,
    substeps: int = DEFAULT_SUBSTEPS,
    min_separation_s: float = MIN_CYCLE_SEPARATION_S,
    smoothing_s: float = SMOOTHING_S,
    **kwargs: typing.Any,
) -> models.ForecastReport:
    """Fit leading cardiac cycles and predict the last one.

    The model is fitted on the first ``train_cycles`` detected cycles, at
    least one full cycle is skipped, and the final cycle is simulated from
    its own measured initial conditions.

    Raises:
        errors.ParameterError: when ``train_cycles`` is below 1
        errors.CycleDetectionError: when fewer than ``train_cycles + 2``
            cycles are detected

    """
    if train_cycles < 1:
        raise errors.ParameterError('train_cycles must be >= 1')
    boundaries = detect_cycles(pair.pressure, min_separation_s, smoothing_s)
    detected = max(0, len(boundaries) - 1)
    if detected < train_cycles + 2:
        raise errors.CycleDetectionError(train_cycles + 2, detected)
    theta = library.design_matrix_for(pair, spec)
    train_start, train_stop = boundaries[0], boundaries[train_cycles]
    started = time.perf_counter()
    model = stls.stls_fit(theta.rows(train_start, train_stop), eta, **kwargs)
    elapsed = time.perf_counter() - started
    test_start, test_stop = boundaries[-2], boundaries[-1] + 1
    LOGGER.info(
        'Forecast: trained on samples [%i, %i), testing [%i, %i)',
        train_start,
        train_stop,
        test_start,
        test_stop,
    )
    return models.ForecastReport(
        train_cycles=train_cycles,
        rmse_test=_window_rmse(pair, model, test_start, test_stop, substeps),
        rmse_train=_window_rmse(
            pair, model, train_start, train_stop, substeps
        ),
        fit_seconds=elapsed,
        cycle_boundaries=boundaries,
        model=model,
    )


def classify_damping(
    params: models.LinearParams,
    criterion: models.DampingCriterion = models.DampingCriterion.STANDARD,
) -> models.DampingClass:
    """Classify the free response of the oscillator.

    ``B_EXCEEDS_A_SQUARED`` calls the response underdamped when
    ``b > a^2``; ``STANDARD`` when ``a^2 < 4b``. Values equal within a
    relative tolerance of 1e-9 are critical.

    """
    if criterion == models.DampingCriterion.B_EXCEEDS_A_SQUARED:
        damping, stiffness = params.a**2, params.b
    else:
        damping, stiffness = params.a**2, 4.0 * params.b
    if math.isclose(damping, stiffness, rel_tol=CRITICAL_TOLERANCE):
        regime = models.DampingRegime.CRITICAL
    elif damping < stiffness:
        regime = models.DampingRegime.UNDERDAMPED
    else:
        regime = models.DampingRegime.OVERDAMPED
    return models.DampingClass(
        regime=regime, a=params.a, b=params.b, criterion=criterion
    )


def damping_table(
    rows: typing.Iterable[models.LinearParams],
    criterion: models.DampingCriterion = models.DampingCriterion.STANDARD,
) -> list[models.DampingClass]:
    """Classify every parameter set under one criterion"""
    table = [classify_damping(params, criterion) for params in rows]
    counts = {
        regime: sum(1 for row in table if row.regime == regime)
        for regime in models.DampingRegime
    }
    LOGGER.info(
        'Damping under %s: %s',
        criterion.value,
        ', '.join(
            f'{count} {regime.value}' for regime, count in counts.items()
        ),
    )
    return table


def _signed_area(x: numpy.ndarray, y: numpy.ndarray) -> float:
    # shoelace sum over the closed polygon
    return 0.5 * float(
        numpy.sum(x * numpy.roll(y, -1) - numpy.roll(x, -1) * y)
    )


def phase_portrait(
    pair: models.SignalPair,
    simulated: models.TimeSeries,
    boundaries: list[int] | None = None,
) -> models.PhasePortrait:
    """Pressure-velocity loops of the measured and simulated trajectories.

    Args:
        pair: Measured record
        simulated: Simulated pressure aligned with ``pair``
        boundaries: Cycle boundaries; detected from the measured pressure
            when omitted. With fewer than two boundaries the whole record
            is treated as one loop.

    """
    if len(simulated) != len(pair):
        raise errors.InputError('Simulated pressure is not aligned')
    if boundaries is None:
        boundaries = detect_cycles(pair.pressure)
    if len(boundaries) < 2:
        boundaries = [0, len(pair) - 1]
    p, v = pair.pressure.values, pair.velocity.values
    p_sim = simulated.values
    measured, modeled = [], []
    for start, stop in zip(boundaries[:-1], boundaries[1:], strict=True):
        window = slice(start, stop + 1)
        measured.append(_signed_area(p[window], v[window]))
        modeled.append(_signed_area(p_sim[window], v[window]))
    return models.PhasePortrait(
        p_measured=p,
        v_measured=v,
        p_simulated=p_sim,
        cycle_boundaries=boundaries,
        measured_areas=measured,
        simulated_areas=modeled,
    )


def portrait_frame(portrait: models.PhasePortrait) -> pandas.DataFrame:
    """Loop points as ``p_meas, v_meas, p_sim`` columns"""
    return pandas.DataFrame(
        {
            'p_meas': portrait.p_measured,
            'v_meas': portrait.v_measured,
            'p_sim': portrait.p_simulated,
        }
    )


def write_phase_portrait(
    portrait: models.PhasePortrait, path: pathlib.Path
) -> None:
    portrait_frame(portrait).to_csv(
        path, index=False, float_format=signal.FLOAT_FORMAT
    )
