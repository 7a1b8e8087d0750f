import enum
import math
import typing

import numpy
import orjson
import pydantic

RELATIVE_TOLERANCE = 1e-12


def _as_vector(value: typing.Any) -> numpy.ndarray:
    array = numpy.array(value, dtype=numpy.float64)
    if array.ndim != 1:
        raise ValueError(f'Expected a 1-D sequence, got {array.ndim}-D')
    array.setflags(write=False)
    return array


def _as_matrix(value: typing.Any) -> numpy.ndarray:
    array = numpy.array(value, dtype=numpy.float64)
    if array.ndim != 2:
        raise ValueError(f'Expected a 2-D array, got {array.ndim}-D')
    array.setflags(write=False)
    return array


def _to_list(value: numpy.ndarray) -> list:
    return value.tolist()


Vector = typing.Annotated[
    numpy.ndarray,
    pydantic.BeforeValidator(_as_vector),
    pydantic.PlainSerializer(_to_list, return_type=list),
]
Matrix = typing.Annotated[
    numpy.ndarray,
    pydantic.BeforeValidator(_as_matrix),
    pydantic.PlainSerializer(_to_list, return_type=list),
]


class _Model(pydantic.BaseModel):
    """Base model for hemosindy's immutable, numpy-backed domain types."""

    model_config = pydantic.ConfigDict(
        arbitrary_types_allowed=True, frozen=True, use_enum_values=False
    )


class ClassLabel(enum.IntEnum):
    """Flow category of a subject's record"""

    AA = 0
    AVM = 1
    TREATED = 2

    @property
    def display_name(self) -> str:
        return 'Treated' if self is ClassLabel.TREATED else self.name

    @classmethod
    def parse(cls, value: str | int) -> 'ClassLabel':
        """Accept a class index or a case-insensitive class name"""
        text = str(value).strip()
        if text.isdigit():
            return cls(int(text))
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f'Unknown class label {value!r}') from None


class Phase(enum.StrEnum):
    """Surgery phase during which a record was taken"""

    BEFORE = 'Before'
    DURING = 'During'
    AFTER = 'After'


class TimeSeries(_Model):
    """A uniformly sampled scalar signal.

    Attributes:
        values: Sample values, at least three of them
        dt: Sampling interval in seconds
        t0: Time of the first sample in seconds
        unit: Free-form unit label, e.g. ``mmHg``
    """

    values: Vector
    dt: float = pydantic.Field(gt=0, allow_inf_nan=False)
    t0: float = pydantic.Field(default=0.0, allow_inf_nan=False)
    unit: str = ''

    @pydantic.field_validator('values')
    @classmethod
    def validate_values(cls, value: numpy.ndarray) -> numpy.ndarray:
        if value.size < 3:
            raise ValueError(
                f'A series needs at least 3 samples, got {value.size}'
            )
        if not numpy.all(numpy.isfinite(value)):
            raise ValueError('Series contains non-finite samples')
        return value

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def times(self) -> numpy.ndarray:
        return self.t0 + self.dt * numpy.arange(len(self))

    @property
    def amplitude(self) -> float:
        """Largest absolute sample value"""
        return float(numpy.max(numpy.abs(self.values)))

    def with_values(self, values: numpy.ndarray) -> 'TimeSeries':
        """Return a series on the same time grid carrying new values"""
        return TimeSeries(
            values=values, dt=self.dt, t0=self.t0, unit=self.unit
        )

    def window(self, start: int, stop: int) -> 'TimeSeries':
        """Return the samples ``[start, stop)`` with a shifted ``t0``"""
        return TimeSeries(
            values=self.values[start:stop],
            dt=self.dt,
            t0=self.t0 + start * self.dt,
            unit=self.unit,
        )


class SignalPair(_Model):
    """Aligned pressure and velocity records of one subject"""

    pressure: TimeSeries
    velocity: TimeSeries
    class_label: ClassLabel | None = None
    phase: Phase | None = None
    subject_id: str = ''

    @pydantic.model_validator(mode='after')
    def validate_alignment(self) -> typing.Self:
        if len(self.pressure) != len(self.velocity):
            raise ValueError(
                f'Pressure has {len(self.pressure)} samples, velocity has '
                f'{len(self.velocity)}'
            )
        if not math.isclose(
            self.pressure.dt, self.velocity.dt, rel_tol=RELATIVE_TOLERANCE
        ):
            raise ValueError('Pressure and velocity sampling intervals differ')
        if not math.isclose(
            self.pressure.t0,
            self.velocity.t0,
            rel_tol=RELATIVE_TOLERANCE,
            abs_tol=RELATIVE_TOLERANCE * self.pressure.dt,
        ):
            raise ValueError('Pressure and velocity start times differ')
        return self

    def __len__(self) -> int:
        return len(self.pressure)

    @property
    def dt(self) -> float:
        return self.pressure.dt

    def window(self, start: int, stop: int) -> 'SignalPair':
        return self.model_copy(
            update={
                'pressure': self.pressure.window(start, stop),
                'velocity': self.velocity.window(start, stop),
            }
        )


class DerivativeSet(_Model):
    """First and second finite-difference derivatives of a series"""

    d1: TimeSeries
    d2: TimeSeries
    boundary_order: int = 1
    interior_order: int = 2


class TermSpec(_Model):
    """One candidate monomial p^i * dp^j * v^k of the library"""

    p_exp: int = pydantic.Field(ge=0, le=9)
    dp_exp: int = pydantic.Field(ge=0, le=9)
    v_exp: int = pydantic.Field(ge=0, le=1)

    @pydantic.model_validator(mode='after')
    def validate_forcing(self) -> typing.Self:
        if self.v_exp and (self.p_exp or self.dp_exp):
            raise ValueError('The forcing term may not multiply state terms')
        return self

    @property
    def is_constant(self) -> bool:
        return not (self.p_exp or self.dp_exp or self.v_exp)

    @property
    def is_forcing(self) -> bool:
        return self.v_exp == 1

    @property
    def name(self) -> str:
        if self.is_constant:
            return '1'
        factors = []
        for symbol, power in (
            ('p', self.p_exp),
            ('dp', self.dp_exp),
            ('v', self.v_exp),
        ):
            if power == 1:
                factors.append(symbol)
            elif power > 1:
                factors.append(f'{symbol}^{power}')
        return '*'.join(factors)

    def as_triple(self) -> tuple[int, int, int]:
        return self.p_exp, self.dp_exp, self.v_exp

    def evaluate(
        self, p: numpy.ndarray, dp: numpy.ndarray, v: numpy.ndarray
    ) -> numpy.ndarray:
        """Evaluate the monomial sample-wise"""
        column = numpy.ones_like(p, dtype=numpy.float64)
        if self.p_exp:
            column = column * p**self.p_exp
        if self.dp_exp:
            column = column * dp**self.dp_exp
        if self.v_exp:
            column = column * v
        return column


def _as_terms(value: typing.Any) -> typing.Any:
    if isinstance(value, list | tuple):
        return tuple(
            TermSpec(p_exp=item[0], dp_exp=item[1], v_exp=item[2])
            if isinstance(item, list | tuple)
            else item
            for item in value
        )
    return value


class LibrarySpec(_Model):
    """Ordered candidate terms; the order defines the design-matrix columns
    and the coefficient indices.

    """

    terms: typing.Annotated[
        tuple[TermSpec, ...], pydantic.BeforeValidator(_as_terms)
    ]

    @pydantic.model_validator(mode='before')
    @classmethod
    def from_triples(cls, value: typing.Any) -> typing.Any:
        if isinstance(value, list | tuple):
            return {'terms': value}
        return value

    @pydantic.field_validator('terms')
    @classmethod
    def validate_terms(
        cls, value: tuple[TermSpec, ...]
    ) -> tuple[TermSpec, ...]:
        if not value:
            raise ValueError('A library needs at least one term')
        triples = [term.as_triple() for term in value]
        if len(set(triples)) != len(triples):
            raise ValueError('Library terms must be unique')
        return value

    @pydantic.model_serializer
    def serialize_terms(self) -> list[list[int]]:
        return [list(term.as_triple()) for term in self.terms]

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> list[str]:
        return [term.name for term in self.terms]

    def index(self, p_exp: int, dp_exp: int, v_exp: int) -> int | None:
        """Return the column index of a term, or None if absent"""
        for offset, term in enumerate(self.terms):
            if term.as_triple() == (p_exp, dp_exp, v_exp):
                return offset
        return None

    def forcing_indices(self) -> tuple[int, ...]:
        return tuple(
            offset
            for offset, term in enumerate(self.terms)
            if term.is_forcing
        )

    def to_json(self) -> bytes:
        """Serialize as an array of exponent triples"""
        return orjson.dumps(self.serialize_terms())

    @classmethod
    def from_json(cls, value: str | bytes) -> 'LibrarySpec':
        return cls(terms=orjson.loads(value))


class DesignMatrix(_Model):
    """Candidate-term matrix and its regression target.

    Attributes:
        columns: Matrix of shape (rows, terms), one column per term
        terms: The library that generated the columns
        target: The finite-difference second derivative per row
    """

    columns: Matrix
    terms: LibrarySpec
    target: Vector

    @pydantic.model_validator(mode='after')
    def validate_shape(self) -> typing.Self:
        rows, count = self.columns.shape
        if count != len(self.terms):
            raise ValueError(
                f'Matrix has {count} columns for {len(self.terms)} terms'
            )
        if rows != self.target.size:
            raise ValueError(
                f'Matrix has {rows} rows, target has {self.target.size}'
            )
        if not (
            numpy.all(numpy.isfinite(self.columns))
            and numpy.all(numpy.isfinite(self.target))
        ):
            raise ValueError('Design matrix contains non-finite entries')
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return self.columns.shape  # type: ignore[return-value]

    def rows(self, start: int, stop: int) -> 'DesignMatrix':
        """Return the design matrix restricted to rows ``[start, stop)``"""
        return DesignMatrix(
            columns=self.columns[start:stop],
            terms=self.terms,
            target=self.target[start:stop],
        )


class SparseModel(_Model):
    """Sparse coefficient vector identified by thresholded least squares.

    A coefficient of exactly zero marks an eliminated term. Coefficients
    are the raw fitted values of ``d2p = Theta @ xi``.
    """

    coefficients: Vector
    terms: LibrarySpec
    threshold: float = pydantic.Field(ge=0, allow_inf_nan=False)
    iterations: int = pydantic.Field(ge=0)
    residual_norm: float = pydantic.Field(ge=0)
    active_count: int = pydantic.Field(ge=0)
    exempt: tuple[int, ...] = ()
    normalized: bool = False

    @pydantic.model_validator(mode='after')
    def validate_sparsity(self) -> typing.Self:
        if self.coefficients.size != len(self.terms):
            raise ValueError(
                f'{self.coefficients.size} coefficients for '
                f'{len(self.terms)} terms'
            )
        if not numpy.all(numpy.isfinite(self.coefficients)):
            raise ValueError('Coefficients must be finite')
        nonzero = int(numpy.count_nonzero(self.coefficients))
        if nonzero != self.active_count:
            raise ValueError(
                f'active_count is {self.active_count} but {nonzero} '
                f'coefficients are nonzero'
            )
        for offset, value in enumerate(self.coefficients):
            if self.normalized or offset in self.exempt or value == 0.0:
                continue
            if abs(value) < self.threshold:
                raise ValueError(
                    f'Active coefficient {self.terms.names[offset]}='
                    f'{value:g} is below the threshold {self.threshold:g}'
                )
        return self

    @pydantic.computed_field  # type: ignore[prop-decorator]
    @property
    def term_names(self) -> list[str]:
        return self.terms.names

    @property
    def active(self) -> numpy.ndarray:
        """Boolean mask of the terms kept by the fit"""
        return self.coefficients != 0.0

    @property
    def active_terms(self) -> list[str]:
        return [
            name
            for name, keep in zip(self.terms.names, self.active, strict=True)
            if keep
        ]

    @property
    def is_empty(self) -> bool:
        return self.active_count == 0

    def coefficient(self, p_exp: int, dp_exp: int, v_exp: int) -> float:
        """Return a term's coefficient, zero when the term is absent"""
        offset = self.terms.index(p_exp, dp_exp, v_exp)
        return 0.0 if offset is None else float(self.coefficients[offset])


class TermSummary(_Model):
    """Spread of one coefficient across a group of fitted models"""

    term: str
    mean: float
    std: float
    active_fraction: float = pydantic.Field(ge=0, le=1)


class BenchReport(_Model):
    """Wall-clock timings of repeated fits.

    Attributes:
        seconds: Duration of each run
        iterations: Fits executed per run
        consistent: True when every run produced identical coefficients
    """

    seconds: list[float]
    iterations: int = pydantic.Field(ge=1)
    mean: float
    std: float
    median: float
    consistent: bool


class LinearParams(_Model):
    """Parameters of the forced damped oscillator
    ``d2p + a*dp + b*p = epsilon*v``.

    """

    a: float = pydantic.Field(allow_inf_nan=False, description='1/s')
    b: float = pydantic.Field(allow_inf_nan=False, description='1/s^2')
    epsilon: float = pydantic.Field(
        allow_inf_nan=False, description='pressure / (s^2 * velocity)'
    )

    @pydantic.computed_field  # type: ignore[prop-decorator]
    @property
    def units(self) -> dict[str, str]:
        return {
            'a': '1/s',
            'b': '1/s^2',
            'epsilon': 'pressure/(s^2*velocity)',
        }

    def as_array(self) -> numpy.ndarray:
        return numpy.array([self.a, self.b, self.epsilon])


class SimResult(_Model):
    """Simulated pressure trajectory scored against a measured record"""

    simulated_pressure: TimeSeries
    rmse: float = pydantic.Field(ge=0)
    params_used: SparseModel


class ForecastReport(_Model):
    """Outcome of fitting on leading cycles and predicting the last one.

    Attributes:
        train_cycles: Number of cardiac cycles in the training window
        rmse_test: RMSE of the simulation over the final cycle
        rmse_train: RMSE of the simulation over the training window
        fit_seconds: Wall-clock time spent fitting
        cycle_boundaries: Sample indices of the detected cycle boundaries
    """

    train_cycles: int = pydantic.Field(ge=1)
    rmse_test: float = pydantic.Field(ge=0)
    rmse_train: float = pydantic.Field(ge=0)
    fit_seconds: float = pydantic.Field(ge=0)
    cycle_boundaries: list[int]
    model: SparseModel

    @pydantic.model_validator(mode='after')
    def validate_windows(self) -> typing.Self:
        if len(self.cycle_boundaries) < self.train_cycles + 3:
            raise ValueError(
                'Test cycle must be separated from training by a full cycle'
            )
        return self

    @property
    def train_window(self) -> tuple[int, int]:
        return (
            self.cycle_boundaries[0],
            self.cycle_boundaries[self.train_cycles],
        )

    @property
    def test_window(self) -> tuple[int, int]:
        return self.cycle_boundaries[-2], self.cycle_boundaries[-1]


class ReproducibilityReport(_Model):
    """Relative parameter deviations of half-record fits from the full fit.

    Deviations are ``|half - full| / |full|`` per term active in the full
    fit. When any fit is empty the report is marked incomparable and the
    deviations are left empty.
    """

    terms: list[str]
    first_half: list[float]
    second_half: list[float]
    first_max: float | None
    second_max: float | None
    overall_max: float | None
    comparable: bool
    full: SparseModel
    first: SparseModel
    second: SparseModel


class SweepRow(_Model):
    """Fit and simulation summary of one threshold"""

    eta: float
    active_terms: list[str]
    rmse: float | None
    derivative_error: float
    fit_seconds: float
    status: typing.Literal['ok', 'empty', 'diverged']
    model: SparseModel


class PhasePortrait(_Model):
    """Measured and simulated pressure-velocity loops.

    Areas are shoelace sums over each cardiac cycle of the ``(p, v)``
    polygon; positive means counterclockwise.
    """

    p_measured: Vector
    v_measured: Vector
    p_simulated: Vector
    cycle_boundaries: list[int]
    measured_areas: list[float]
    simulated_areas: list[float]

    @property
    def measured_counterclockwise(self) -> list[bool]:
        return [area > 0 for area in self.measured_areas]

    @property
    def simulated_counterclockwise(self) -> list[bool]:
        return [area > 0 for area in self.simulated_areas]


def _member_by_name(
    enum_type: type[enum.Enum], value: object, aliases: dict[str, str]
) -> typing.Any:
    """Look up a member by its name in any case or separator style"""
    if not isinstance(value, str):
        return None
    key = ''.join(char for char in value.lower() if char.isalnum())
    for member in enum_type:
        if member.name.replace('_', '').lower() == key:
            return member
    name = aliases.get(key)
    return enum_type[name] if name else None


class DampingRegime(enum.StrEnum):
    UNDERDAMPED = 'Underdamped'
    CRITICAL = 'Critical'
    OVERDAMPED = 'Overdamped'


class DampingCriterion(enum.StrEnum):
    """Rule deciding when the free oscillator response is underdamped"""

    B_EXCEEDS_A_SQUARED = 'b>a^2'
    STANDARD = 'a^2<4b'

    @classmethod
    def _missing_(cls, value: object) -> typing.Any:
        return _member_by_name(
            cls, value, {'standarda2lessthan4b': 'STANDARD'}
        )


class DampingClass(_Model):
    regime: DampingRegime
    a: float
    b: float
    criterion: DampingCriterion


class FeatureVector(_Model):
    """Bias-extended classifier input ``[1, a, b, epsilon]`` and its label"""

    x: Vector
    label: ClassLabel
    subject_id: str = ''

    @pydantic.field_validator('x')
    @classmethod
    def validate_x(cls, value: numpy.ndarray) -> numpy.ndarray:
        if value.size != 4:
            raise ValueError(f'Expected 4 features, got {value.size}')
        if value[0] != 1.0:
            raise ValueError('The first feature must be the bias term 1')
        if not numpy.all(numpy.isfinite(value)):
            raise ValueError('Features must be finite')
        return value

    @classmethod
    def from_params(
        cls, a: float, b: float, epsilon: float, label: ClassLabel, **kwargs
    ) -> 'FeatureVector':
        return cls(x=[1.0, a, b, epsilon], label=label, **kwargs)


class Objective(enum.StrEnum):
    """Training objective of the softmax classifier"""

    MULTINOMIAL = 'multinomial'
    PER_CLASS_BERNOULLI = 'per-class-bernoulli'

    @classmethod
    def _missing_(cls, value: object) -> typing.Any:
        return _member_by_name(cls, value, {'multinomialnll': 'MULTINOMIAL'})


class FeatureScaling(_Model):
    """Affine standardization of the non-bias features"""

    mean: Vector
    scale: Vector

    @pydantic.model_validator(mode='after')
    def validate_invertible(self) -> typing.Self:
        if self.mean.shape != self.scale.shape:
            raise ValueError('Scaling mean and scale shapes differ')
        if not numpy.all(self.scale > 0):
            raise ValueError('Scaling factors must be positive')
        return self

    def apply(self, features: numpy.ndarray) -> numpy.ndarray:
        """Standardize bias-extended rows, leaving the bias column alone"""
        scaled = numpy.array(features, dtype=numpy.float64, copy=True)
        scaled[..., 1:] = (scaled[..., 1:] - self.mean) / self.scale
        return scaled


class ClassifierModel(_Model):
    """Softmax weights over standardized bias-extended features"""

    weights: Matrix
    scaling: FeatureScaling
    objective: Objective = Objective.MULTINOMIAL
    regularization_l2: float = pydantic.Field(default=1e-2, ge=0)
    converged: bool = True
    iterations: int = 0

    @pydantic.field_validator('weights')
    @classmethod
    def validate_weights(cls, value: numpy.ndarray) -> numpy.ndarray:
        if value.shape != (len(ClassLabel), 4):
            raise ValueError(f'Expected 3x4 weights, got {value.shape}')
        if not numpy.all(numpy.isfinite(value)):
            raise ValueError('Weights must be finite')
        return value


class PartitionReport(_Model):
    """Test accuracies over repeated random train/test partitions.

    Attributes:
        accuracies: Test accuracy of each partition
        mean: Mean accuracy
        std: Standard deviation of the mean (standard error)
        spread: Standard deviation of the individual accuracies
    """

    accuracies: Vector
    mean: float
    std: float
    spread: float
    seed: int
    train_size: int
    test_size: int
    stratified: bool = True

    @pydantic.model_validator(mode='after')
    def validate_consistency(self) -> typing.Self:
        values = self.accuracies
        if values.size == 0:
            raise ValueError('At least one partition is required')
        if numpy.any(values < 0) or numpy.any(values > 1):
            raise ValueError('Accuracies must lie in [0, 1]')
        if not math.isclose(
            self.mean, float(values.mean()), abs_tol=RELATIVE_TOLERANCE
        ):
            raise ValueError('Mean does not match the accuracies')
        return self


class SineComponent(_Model):
    amplitude: float = pydantic.Field(allow_inf_nan=False)
    frequency_hz: float = pydantic.Field(gt=0, allow_inf_nan=False)
    phase: float = pydantic.Field(default=0.0, allow_inf_nan=False)


class SumOfSines(_Model):
    kind: typing.Literal['sum-of-sines'] = 'sum-of-sines'
    components: list[SineComponent] = pydantic.Field(min_length=1)

    def evaluate(self, times: numpy.ndarray) -> numpy.ndarray:
        values = numpy.zeros_like(times, dtype=numpy.float64)
        for component in self.components:
            values += component.amplitude * numpy.sin(
                2.0 * math.pi * component.frequency_hz * times
                + component.phase
            )
        return values


class Replay(_Model):
    kind: typing.Literal['replay'] = 'replay'
    series: TimeSeries


Forcing = typing.Annotated[
    SumOfSines | Replay, pydantic.Field(discriminator='kind')
]


class GeneratorSpec(_Model):
    """Recipe for a synthetic signal pair generated from a known model"""

    model: SparseModel | LinearParams
    forcing: Forcing
    duration_s: float = pydantic.Field(gt=0, allow_inf_nan=False)
    dt: float = pydantic.Field(default=0.005, gt=0, allow_inf_nan=False)
    noise_std_pressure: float = pydantic.Field(
        default=0.0, ge=0, allow_inf_nan=False
    )
    noise_std_velocity: float = pydantic.Field(
        default=0.0, ge=0, allow_inf_nan=False
    )
    rng_seed: int = 0
    warmup_s: float = pydantic.Field(default=0.0, ge=0, allow_inf_nan=False)
    p0: float = pydantic.Field(default=0.0, allow_inf_nan=False)
    dp0: float = pydantic.Field(default=0.0, allow_inf_nan=False)
    pressure_unit: str = 'mmHg'
    velocity_unit: str = 'cm/s'

    @pydantic.model_validator(mode='after')
    def validate_samples(self) -> typing.Self:
        if self.sample_count < 3:
            raise ValueError('duration_s / dt must cover at least 3 samples')
        if isinstance(self.forcing, Replay):
            if not math.isclose(
                self.forcing.series.dt, self.dt, rel_tol=RELATIVE_TOLERANCE
            ):
                raise ValueError('Replayed forcing must share dt')
            if len(self.forcing.series) < self.warmup_count + (
                self.sample_count
            ):
                raise ValueError('Replayed forcing is shorter than needed')
        return self

    @property
    def sample_count(self) -> int:
        return round(self.duration_s / self.dt) + 1

    @property
    def warmup_count(self) -> int:
        return round(self.warmup_s / self.dt)


class DecisionGrid(_Model):
    """Predicted class at every node of a feature-space grid.

    Attributes:
        points: Matrix of shape (nodes, 3) holding ``a, b, epsilon``
        labels: Predicted class per node
        plane: For 2-D slices, the plane name (``ab``, ``ea`` or ``eb``)
        fixed: For 2-D slices, the value of the omitted coordinate
    """

    points: Matrix
    labels: tuple[ClassLabel, ...]
    plane: str | None = None
    fixed: float | None = None

    @pydantic.model_validator(mode='after')
    def validate_nodes(self) -> typing.Self:
        if self.points.shape[1] != 3:
            raise ValueError('Grid points must have three coordinates')
        if self.points.shape[0] != len(self.labels):
            raise ValueError('Every grid node needs exactly one label')
        return self

    def counts(self) -> dict[ClassLabel, int]:
        return {
            label: sum(1 for item in self.labels if item == label)
            for label in ClassLabel
        }
