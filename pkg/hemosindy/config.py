"""
Run configuration
=================

Every command builds a :class:`RunConfig` from an optional JSON file and
its command-line flags, flags taking precedence, and validates it before
any computation starts.

"""

import logging
import pathlib
import typing

import orjson
import pydantic

from hemosindy import errors, models, utils

LOGGER = logging.getLogger(__name__)


class _Options(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra='forbid', frozen=True)


class SignalOptions(_Options):
    cutoff_hz: float | None = pydantic.Field(
        default=None, gt=0, description='Low-pass cutoff, None disables'
    )
    subtract_mean: bool = True


class LibraryOptions(_Options):
    choice: str = pydantic.Field(
        default='eq2',
        description='eq2, linear, lienard or a JSON file of exponent triples',
    )
    exempt_forcing: bool = False
    normalize: bool = False


class FitOptions(_Options):
    etas: list[pydantic.NonNegativeFloat] = pydantic.Field(
        default_factory=lambda: [5.0], min_length=1
    )
    edge_rows: int = pydantic.Field(default=2, ge=0)


class SimOptions(_Options):
    substeps: int = pydantic.Field(default=4, ge=1)
    min_cycle_separation_s: float = pydantic.Field(default=0.4, gt=0)
    smoothing_s: float = pydantic.Field(default=0.05, ge=0)


class ClassifierOptions(_Options):
    objective: models.Objective = models.Objective.MULTINOMIAL
    regularization_l2: float = pydantic.Field(default=1e-2, ge=0)
    max_iterations: int = pydantic.Field(default=1000, ge=1)
    partitions: int = pydantic.Field(default=100, ge=1)
    train_fraction: float = pydantic.Field(default=0.8, gt=0, lt=1)
    stratified: bool = True


class RunConfig(_Options):
    """Validated options of one command invocation"""

    inputs: list[pathlib.Path] = pydantic.Field(default_factory=list)
    signal: SignalOptions = SignalOptions()
    library: LibraryOptions = LibraryOptions()
    fit: FitOptions = FitOptions()
    sim: SimOptions = SimOptions()
    classifier: ClassifierOptions = ClassifierOptions()
    output_dir: pathlib.Path = pydantic.Field(
        default=pathlib.Path('.'), exclude=True
    )
    seed: int = 0
    threads: int = pydantic.Field(
        default_factory=utils.logical_cpus, ge=1, exclude=True
    )

    def fingerprint(self) -> str:
        """SHA-256 of the options that determine the results"""
        return utils.fingerprint(self.model_dump(mode='json'))


def _merge(
    base: dict[str, typing.Any], overrides: dict[str, typing.Any]
) -> dict[str, typing.Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: pathlib.Path) -> dict[str, typing.Any]:
    """Read a JSON configuration file into a plain mapping

    Raises:
        errors.DataFileError: when the file cannot be read or parsed

    """
    try:
        value = orjson.loads(path.read_bytes())
    except (OSError, orjson.JSONDecodeError) as err:
        raise errors.DataFileError(
            f'Cannot read config {path}: {err}'
        ) from err
    if not isinstance(value, dict):
        raise errors.DataFileError(f'Config {path} must hold a JSON object')
    return value


def load(
    path: pathlib.Path | None = None,
    overrides: dict[str, typing.Any] | None = None,
) -> RunConfig:
    """Build a configuration from a file and explicit overrides.

    ``overrides`` is a nested mapping in the shape of :class:`RunConfig`;
    entries set to ``None`` are treated as not given.

    Raises:
        errors.DataFileError: when the file cannot be read
        errors.ParameterError: when the merged options are invalid

    """
    values = read_config_file(path) if path else {}
    values = _merge(values, _drop_unset(overrides or {}))
    try:
        config = RunConfig.model_validate(values)
    except pydantic.ValidationError as err:
        raise errors.ParameterError(f'Invalid configuration: {err}') from err
    LOGGER.debug('Configuration %s', config.fingerprint())
    return config


def _drop_unset(values: dict[str, typing.Any]) -> dict[str, typing.Any]:
    cleaned = {}
    for key, value in values.items():
        if isinstance(value, dict):
            value = _drop_unset(value)
            if not value:
                continue
        elif value is None:
            continue
        cleaned[key] = value
    return cleaned
