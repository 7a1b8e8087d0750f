"""
Synthetic signal generator
==========================

Produces pressure/velocity pairs from a known model so identification and
validation can be checked against ground truth.

"""

import logging
import pathlib
import typing

import numpy

from hemosindy import errors, models, signal, sim, stls

LOGGER = logging.getLogger(__name__)

ORACLE_SUBSTEPS = 8


def cardiac_forcing(
    fundamental_hz: float = 1.2, harmonics: int = 3, amplitude: float = 1.0
) -> models.SumOfSines:
    """Return a periodic velocity waveform with decaying harmonics.

    Harmonic ``k`` (counting from 1) has frequency ``k * fundamental_hz``
    and amplitude ``amplitude / 4**(k - 1)``, so the fundamental dominates
    and every period carries a single systolic peak.

    """
    if harmonics < 1:
        raise errors.ParameterError('At least one harmonic is required')
    return models.SumOfSines(
        components=[
            models.SineComponent(
                amplitude=amplitude / 4 ** (harmonic - 1),
                frequency_hz=harmonic * fundamental_hz,
            )
            for harmonic in range(1, harmonics + 1)
        ]
    )


def _forcing_values(spec: models.GeneratorSpec) -> numpy.ndarray:
    total = spec.warmup_count + spec.sample_count
    if isinstance(spec.forcing, models.Replay):
        return spec.forcing.series.values[:total]
    times = spec.dt * (numpy.arange(total) - spec.warmup_count)
    return spec.forcing.evaluate(times)


def generate(spec: models.GeneratorSpec) -> models.SignalPair:
    """Integrate the generator model and add seeded Gaussian noise.

    The first ``warmup_s`` seconds are integrated and discarded, so the
    returned record starts at ``t = 0`` with ``round(duration_s / dt) + 1``
    samples. Pressure and velocity noise are drawn from one generator
    seeded with ``rng_seed``, pressure first.

    Raises:
        errors.DivergenceError: when the model blows up

    """
    model = spec.model
    if isinstance(model, models.LinearParams):
        model = stls.linear_model(model)
    velocity = _forcing_values(spec)
    clean = sim.simulate(
        model,
        models.TimeSeries(
            values=velocity, dt=spec.dt, t0=-spec.warmup_count * spec.dt
        ),
        spec.p0,
        spec.dp0,
        substeps=ORACLE_SUBSTEPS,
    )
    start = spec.warmup_count
    rng = numpy.random.default_rng(spec.rng_seed)
    pressure = clean.values[start:] + rng.normal(
        0.0, spec.noise_std_pressure, spec.sample_count
    )
    velocity = velocity[start:] + rng.normal(
        0.0, spec.noise_std_velocity, spec.sample_count
    )
    LOGGER.debug(
        'Generated %i samples at dt=%g after %i warm-up samples',
        spec.sample_count,
        spec.dt,
        start,
    )
    return models.SignalPair(
        pressure=models.TimeSeries(
            values=pressure, dt=spec.dt, unit=spec.pressure_unit
        ),
        velocity=models.TimeSeries(
            values=velocity, dt=spec.dt, unit=spec.velocity_unit
        ),
        subject_id=f'synthetic-{spec.rng_seed}',
    )


def to_csv(
    pair: models.SignalPair,
    path: pathlib.Path,
    metadata: dict[str, typing.Any] | None = None,
) -> None:
    """Write a generated pair in the ingestible ``t,p,v`` format"""
    signal.write_csv(pair, path, metadata)
