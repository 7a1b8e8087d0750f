import math
import pathlib
import typing

import numpy
import yaml

from hemosindy import models, synth

DATA_DIR = pathlib.Path(__file__).parent / 'data'

DT = 0.005
FUNDAMENTAL_HZ = 1.25
PERIOD_SAMPLES = 160


def load_test_data(filename: str) -> dict[str, typing.Any]:
    with (DATA_DIR / filename).open('r') as handle:
        result = yaml.safe_load(handle)
        if not isinstance(result, dict):
            raise TypeError(
                f'Expected dict from {filename}, got {type(result)}'
            )
        return result


def reference_params() -> models.LinearParams:
    """Oscillator parameters of the first reference subject"""
    return models.LinearParams(**load_test_data('cases.yaml')['oscillator'])


def series(
    values: typing.Any, dt: float = DT, **kwargs: typing.Any
) -> models.TimeSeries:
    return models.TimeSeries(values=values, dt=dt, **kwargs)


def sine_pair(
    frequency_hz: float = 1.0, samples: int = 1000, dt: float = DT
) -> models.SignalPair:
    """Pressure ``cos`` and velocity ``sin`` at one frequency"""
    phase = 2.0 * math.pi * frequency_hz * dt * numpy.arange(samples)
    return models.SignalPair(
        pressure=series(numpy.cos(phase), dt),
        velocity=series(numpy.sin(phase), dt),
    )


def periodic_pair(
    periods: int = 8,
    noise: float = 0.0,
    seed: int = 0,
    params: models.LinearParams | None = None,
) -> models.SignalPair:
    """Stationary oscillator response covering whole forcing periods.

    The record holds ``periods * PERIOD_SAMPLES`` samples, so its periodic
    extension is continuous. ``noise`` is the pressure noise standard
    deviation relative to the noise-free pressure amplitude.

    """
    spec = models.GeneratorSpec(
        model=params or reference_params(),
        forcing=synth.cardiac_forcing(FUNDAMENTAL_HZ),
        duration_s=(periods * PERIOD_SAMPLES - 1) * DT,
        dt=DT,
        warmup_s=5.0,
        rng_seed=seed,
    )
    pair = synth.generate(spec)
    if not noise:
        return pair
    return synth.generate(
        spec.model_copy(
            update={'noise_std_pressure': noise * pair.pressure.amplitude}
        )
    )


def transient_pair(
    duration_s: float = 5.0,
    dt: float = DT,
    forcing: models.SumOfSines | None = None,
) -> models.SignalPair:
    """Response from rest under cardiac forcing, start-up transient included"""
    return synth.generate(
        models.GeneratorSpec(
            model=reference_params(),
            forcing=forcing or synth.cardiac_forcing(),
            duration_s=duration_s,
            dt=dt,
        )
    )
