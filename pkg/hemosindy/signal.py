"""
Signal ingestion, preprocessing and finite-difference differentiation
=====================================================================

All operations are pure functions of immutable :class:`TimeSeries` values.

"""

import logging
import pathlib
import typing

import numpy
import orjson
import pandas
import pydantic

from hemosindy import errors, models

LOGGER = logging.getLogger(__name__)

COLUMNS = ('t', 'p', 'v')
UNIFORMITY_TOLERANCE = 1e-6
FLOAT_FORMAT = '%.17g'


def subtract_mean(series: models.TimeSeries) -> models.TimeSeries:
    """Remove the time average from a series"""
    return series.with_values(series.values - series.values.mean())


def lowpass_filter(
    series: models.TimeSeries, cutoff_hz: float
) -> models.TimeSeries:
    """Zero every Fourier component above ``cutoff_hz``.

    This is a sharp spectral cutoff: the discrete Fourier bins whose
    frequency magnitude exceeds the cutoff are zeroed and the series is
    transformed back. Components at or below the cutoff are untouched.

    Args:
        series: The series to filter
        cutoff_hz: Cutoff frequency, strictly between 0 and Nyquist

    Raises:
        errors.ParameterError: when the cutoff is outside (0, Nyquist)

    """
    nyquist = 0.5 / series.dt
    if not 0.0 < cutoff_hz < nyquist:
        raise errors.ParameterError(
            f'Cutoff {cutoff_hz:g} Hz outside (0, {nyquist:g}) Hz'
        )
    spectrum = numpy.fft.rfft(series.values)
    frequencies = numpy.fft.rfftfreq(len(series), d=series.dt)
    spectrum[frequencies > cutoff_hz] = 0.0
    return series.with_values(numpy.fft.irfft(spectrum, n=len(series)))


def _first_derivative(values: numpy.ndarray, dt: float) -> numpy.ndarray:
    # central differences inside, one-sided first order at both ends
    return numpy.gradient(values, dt, edge_order=1)


def differentiate(series: models.TimeSeries) -> models.DerivativeSet:
    """Estimate the first and second time derivatives.

    Interior points use central differences, the first point a forward
    difference and the last a backward difference. The second derivative
    applies the same scheme to the first derivative.

    Raises:
        errors.InputError: when the series has fewer than three samples

    """
    if len(series) < 3:
        raise errors.InputError(
            f'Differentiation needs at least 3 samples, got {len(series)}'
        )
    d1 = _first_derivative(series.values, series.dt)
    d2 = _first_derivative(d1, series.dt)
    unit = series.unit or 'unit'
    return models.DerivativeSet(
        d1=models.TimeSeries(
            values=d1, dt=series.dt, t0=series.t0, unit=f'{unit}/s'
        ),
        d2=models.TimeSeries(
            values=d2, dt=series.dt, t0=series.t0, unit=f'{unit}/s^2'
        ),
    )


def preprocess(
    pair: models.SignalPair,
    cutoff_hz: float | None = None,
    remove_mean: bool = True,
) -> models.SignalPair:
    """Apply the optional noise filter and mean removal to both channels"""
    pressure, velocity = pair.pressure, pair.velocity
    if cutoff_hz is not None:
        pressure = lowpass_filter(pressure, cutoff_hz)
        velocity = lowpass_filter(velocity, cutoff_hz)
    if remove_mean:
        pressure = subtract_mean(pressure)
        velocity = subtract_mean(velocity)
    return pair.model_copy(update={'pressure': pressure, 'velocity': velocity})


def infer_dt(times: numpy.ndarray) -> float:
    """Return the median sampling interval after checking uniformity.

    Raises:
        errors.InputError: when times are not strictly increasing or the
            gaps deviate from the median by more than the tolerance

    """
    gaps = numpy.diff(times)
    if gaps.size < 2 or numpy.any(gaps <= 0):
        raise errors.InputError('Time column must be strictly increasing')
    dt = float(numpy.median(gaps))
    deviation = float(numpy.max(numpy.abs(gaps - dt))) / dt
    if deviation > UNIFORMITY_TOLERANCE:
        raise errors.InputError(
            f'Sampling is not uniform: gaps deviate by {deviation:.3g} '
            f'relative to dt={dt:g}'
        )
    return dt


def _read_units(path: pathlib.Path) -> dict[str, str]:
    try:
        units = orjson.loads(path.read_bytes())
    except (OSError, orjson.JSONDecodeError) as err:
        raise errors.DataFileError(f'Cannot read units {path}: {err}') from err
    if not isinstance(units, dict):
        raise errors.DataFileError(f'Units file {path} must hold an object')
    return {str(key): str(value) for key, value in units.items()}


def read_csv(
    path: pathlib.Path,
    units_path: pathlib.Path | None = None,
    subject_id: str | None = None,
) -> models.SignalPair:
    """Read a ``t,p,v`` CSV file into a signal pair.

    A sidecar JSON file with ``pressure_unit`` and ``velocity_unit`` keys
    is read from ``units_path`` or, when omitted, from the CSV path with a
    ``.json`` suffix if it exists.

    Raises:
        errors.DataFileError: when the file is missing or unparsable
        errors.InputError: when samples are non-finite or non-uniform

    """
    try:
        frame = pandas.read_csv(
            path, dtype=numpy.float64, float_precision='round_trip'
        )
    except (OSError, ValueError, pandas.errors.ParserError) as err:
        raise errors.DataFileError(f'Cannot read {path}: {err}') from err
    missing = [column for column in COLUMNS if column not in frame.columns]
    if missing:
        raise errors.DataFileError(
            f'{path} lacks required columns: {", ".join(missing)}'
        )
    data = frame[list(COLUMNS)].to_numpy(dtype=numpy.float64)
    if not numpy.all(numpy.isfinite(data)):
        rows = numpy.flatnonzero(~numpy.all(numpy.isfinite(data), axis=1))
        raise errors.InputError(
            f'{path} holds non-finite samples on data rows '
            f'{", ".join(str(row + 1) for row in rows[:5])}'
        )
    dt = infer_dt(data[:, 0])
    if units_path is None and path.with_suffix('.json').exists():
        units_path = path.with_suffix('.json')
    units = _read_units(units_path) if units_path else {}
    LOGGER.debug('Read %i samples at dt=%g from %s', len(data), dt, path)
    t0 = float(data[0, 0])
    try:
        return models.SignalPair(
            pressure=models.TimeSeries(
                values=data[:, 1],
                dt=dt,
                t0=t0,
                unit=units.get('pressure_unit', ''),
            ),
            velocity=models.TimeSeries(
                values=data[:, 2],
                dt=dt,
                t0=t0,
                unit=units.get('velocity_unit', ''),
            ),
            subject_id=subject_id if subject_id is not None else path.stem,
        )
    except pydantic.ValidationError as err:
        raise errors.InputError(f'{path}: {err}') from err


def write_csv(
    pair: models.SignalPair,
    path: pathlib.Path,
    metadata: dict[str, typing.Any] | None = None,
) -> None:
    """Write a signal pair as ``t,p,v`` CSV plus its units sidecar.

    ``metadata`` entries are added to the sidecar next to the units.

    """
    frame = pandas.DataFrame(
        {
            't': pair.pressure.times,
            'p': pair.pressure.values,
            'v': pair.velocity.values,
        }
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    units = {
        **(metadata or {}),
        'pressure_unit': pair.pressure.unit,
        'velocity_unit': pair.velocity.unit,
    }
    path.with_suffix('.json').write_bytes(
        orjson.dumps(units, option=orjson.OPT_SORT_KEYS)
    )
