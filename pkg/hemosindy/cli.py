"""
Command-line interface
======================

``hemosindy`` ties ingestion, identification, validation and
classification together. Every command validates its configuration
before computing, writes its outputs only once everything succeeded, and
exits with the code of the :class:`~hemosindy.errors.HemosindyError` it
hit: 2 for invalid input, 3 for file errors and 4 for numerical failures.

"""

import functools
import logging
import pathlib
import sys
import typing

import click
import numpy
import pandas
import pydantic

from hemosindy import (
    classify,
    config,
    errors,
    library,
    models,
    signal,
    sim,
    stls,
    synth,
    utils,
)

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
REGION_CHOICES = ('3d', *classify.PLANES)

Outputs = dict[str, bytes]


class FloatList(click.ParamType):
    """Comma separated floats, e.g. ``0.1,1.0,5.0``"""

    name = 'floats'

    def convert(
        self,
        value: typing.Any,
        param: click.Parameter | None,
        ctx: click.Context | None,
    ) -> list[float]:
        if isinstance(value, list):
            return value
        try:
            return [float(item) for item in str(value).split(',') if item]
        except ValueError:
            self.fail(f'{value!r} is not a list of numbers', param, ctx)


class IntList(click.ParamType):
    name = 'integers'

    def convert(
        self,
        value: typing.Any,
        param: click.Parameter | None,
        ctx: click.Context | None,
    ) -> list[int]:
        if isinstance(value, list):
            return value
        try:
            return [int(item) for item in str(value).split(',') if item]
        except ValueError:
            self.fail(f'{value!r} is not a list of integers', param, ctx)


def _handle_errors(
    command: typing.Callable[..., None],
) -> typing.Callable[..., None]:
    @functools.wraps(command)
    def wrapper(*args: typing.Any, **kwargs: typing.Any) -> None:
        try:
            command(*args, **kwargs)
        except errors.HemosindyError as err:
            LOGGER.debug('Command failed', exc_info=True)
            click.echo(f'Error: {err}', err=True)
            sys.exit(err.exit_code)

    return wrapper


def _load_config(
    ctx: click.Context, overrides: dict[str, typing.Any]
) -> config.RunConfig:
    state = ctx.obj or {}
    return config.load(
        state.get('config_path'),
        {
            **overrides,
            'output_dir': state.get('output_dir'),
            'threads': state.get('threads'),
        },
    )


def _json(
    kind: str,
    payload: pydantic.BaseModel | dict[str, typing.Any] | list,
    settings: config.RunConfig,
) -> bytes:
    return utils.dumps(
        utils.document(kind, payload, settings.fingerprint())
    )


def _csv(frame: pandas.DataFrame) -> bytes:
    return frame.to_csv(
        index=False, float_format=signal.FLOAT_FORMAT, lineterminator='\n'
    ).encode('utf-8')


def _write(
    command: str, outputs: Outputs, settings: config.RunConfig
) -> None:
    """Write every output plus a manifest naming them"""
    directory = settings.output_dir
    manifest = {'command': command, 'files': sorted(outputs)}
    outputs = {
        **outputs,
        'manifest.json': _json('manifest', manifest, settings),
    }
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, content in outputs.items():
            (directory / name).write_bytes(content)
    except OSError as err:
        raise errors.DataFileError(
            f'Cannot write outputs to {directory}: {err}'
        ) from err
    LOGGER.info('Wrote %i files to %s', len(outputs), directory)


def _read_pair(
    path: pathlib.Path, settings: config.RunConfig
) -> models.SignalPair:
    pair = signal.read_csv(path)
    return signal.preprocess(
        pair, settings.signal.cutoff_hz, settings.signal.subtract_mean
    )


def _fit_kwargs(
    settings: config.RunConfig, spec: models.LibrarySpec
) -> dict[str, typing.Any]:
    exempt = spec.forcing_indices() if settings.library.exempt_forcing else ()
    return {'exempt': exempt, 'normalize': settings.library.normalize}


def _eta_label(eta: float) -> str:
    return f'{eta:g}'


def _signal_overrides(
    cutoff_hz: float | None,
    subtract_mean: bool | None,
    library_choice: str | None,
    exempt_forcing: bool | None,
    normalize: bool | None,
) -> dict[str, typing.Any]:
    return {
        'signal': {'cutoff_hz': cutoff_hz, 'subtract_mean': subtract_mean},
        'library': {
            'choice': library_choice,
            'exempt_forcing': exempt_forcing,
            'normalize': normalize,
        },
    }


def _pipeline_options(
    command: typing.Callable[..., None],
) -> typing.Callable[..., None]:
    options = [
        click.option(
            '--library',
            'library_choice',
            help='eq2, linear, lienard or a JSON file of exponent triples',
        ),
        click.option(
            '--cutoff-hz', type=float, help='Low-pass cutoff frequency'
        ),
        click.option(
            '--subtract-mean/--keep-mean',
            default=None,
            help='Remove the time average of both channels',
        ),
        click.option(
            '--exempt-forcing',
            is_flag=True,
            default=None,
            help='Never threshold the velocity term',
        ),
        click.option(
            '--normalize',
            is_flag=True,
            default=None,
            help='Threshold column-normalized coefficient magnitudes',
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@click.group()
@click.option(
    '--config',
    'config_path',
    type=click.Path(path_type=pathlib.Path),
    help='JSON configuration file; command-line flags take precedence',
)
@click.option(
    '-o',
    '--output-dir',
    type=click.Path(file_okay=False, path_type=pathlib.Path),
    help='Directory receiving the command outputs',
)
@click.option('--threads', type=int, help='Worker threads')
@click.option('-v', '--verbose', is_flag=True, help='Debug logging')
@click.version_option(package_name='hemosindy')
@click.pass_context
def main(
    ctx: click.Context,
    config_path: pathlib.Path | None,
    output_dir: pathlib.Path | None,
    threads: int | None,
    verbose: bool,
) -> None:
    """Identify, validate and classify hemodynamic oscillator models"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    ctx.obj = {
        'config_path': config_path,
        'output_dir': output_dir,
        'threads': threads,
    }


@main.command()
@click.argument('input_path', type=click.Path(path_type=pathlib.Path))
@click.option('--eta', type=float, help='Single sparsity threshold')
@click.option('--etas', type=FloatList(), help='Thresholds, e.g. 0.1,1,5')
@click.option('--substeps', type=int, help='Runge-Kutta steps per sample')
@click.option(
    '--edge-rows', type=int, help='Rows dropped at both record ends'
)
@click.option(
    '--phase-portrait',
    is_flag=True,
    help='Export measured and simulated pressure-velocity loops',
)
@_pipeline_options
@click.pass_context
@_handle_errors
def fit(
    ctx: click.Context,
    input_path: pathlib.Path,
    eta: float | None,
    etas: list[float] | None,
    substeps: int | None,
    edge_rows: int | None,
    phase_portrait: bool,
    **pipeline: typing.Any,
) -> None:
    """Identify sparse models of one record, one per threshold"""
    if eta is not None and etas:
        raise errors.ParameterError('Use either --eta or --etas')
    settings = _load_config(
        ctx,
        {
            **_signal_overrides(**pipeline),
            'inputs': [str(input_path)],
            'fit': {
                'etas': [eta] if eta is not None else etas,
                'edge_rows': edge_rows,
            },
            'sim': {'substeps': substeps},
        },
    )
    spec = library.load_library(settings.library.choice)
    pair = _read_pair(input_path, settings)
    rows = sim.sweep_report(
        pair,
        spec,
        settings.fit.etas,
        settings.sim.substeps,
        threads=settings.threads,
        edge_rows=settings.fit.edge_rows,
        **_fit_kwargs(settings, spec),
    )
    outputs: Outputs = {}
    for row in rows:
        label = _eta_label(row.eta)
        payload: dict[str, typing.Any] = {
            'model': row.model.model_dump(mode='json'),
            'status': row.status,
            'rmse': row.rmse,
            'derivative_error': row.derivative_error,
            'residual_norm': row.model.residual_norm,
            'linear_params': None,
        }
        try:
            payload['linear_params'] = stls.extract_linear(
                row.model
            ).model_dump(mode='json')
        except errors.ModelStructureError:
            LOGGER.debug('eta=%s is not a linear oscillator', label)
        outputs[f'model-eta{label}.json'] = _json('fit', payload, settings)
        if phase_portrait and row.status == 'ok':
            simulated = sim.simulate_fit(
                pair, row.model, settings.sim.substeps
            )
            portrait = sim.phase_portrait(
                pair,
                simulated.simulated_pressure,
                sim.detect_cycles(
                    pair.pressure,
                    settings.sim.min_cycle_separation_s,
                    settings.sim.smoothing_s,
                ),
            )
            outputs[f'phase-eta{label}.csv'] = _csv(
                sim.portrait_frame(portrait)
            )
    outputs['sweep.csv'] = _csv(
        pandas.DataFrame(
            {
                'eta': [row.eta for row in rows],
                'active_count': [len(row.active_terms) for row in rows],
                'active_terms': [' '.join(row.active_terms) for row in rows],
                'rmse': [row.rmse for row in rows],
                'derivative_error': [row.derivative_error for row in rows],
                'status': [row.status for row in rows],
            }
        )
    )
    _write('fit', outputs, settings)
    for row in rows:
        click.echo(
            f'eta={row.eta:g}\t{len(row.active_terms)} terms\t'
            f'rmse={row.rmse if row.rmse is not None else "n/a"}\t'
            f'{row.fit_seconds * 1e3:.2f} ms\t{", ".join(row.active_terms)}'
        )


@main.command()
@click.argument('input_path', type=click.Path(path_type=pathlib.Path))
@click.option(
    '--train-cycles',
    type=IntList(),
    default='1,2,3',
    show_default=True,
    help='Training window sizes in cardiac cycles',
)
@click.option('--eta', type=float, help='Sparsity threshold')
@click.option('--substeps', type=int, help='Runge-Kutta steps per sample')
@click.option(
    '--min-cycle-separation',
    type=float,
    help='Minimum seconds between detected systolic peaks',
)
@_pipeline_options
@click.pass_context
@_handle_errors
def forecast(
    ctx: click.Context,
    input_path: pathlib.Path,
    train_cycles: list[int],
    eta: float | None,
    substeps: int | None,
    min_cycle_separation: float | None,
    **pipeline: typing.Any,
) -> None:
    """Fit leading cardiac cycles and forecast the last one"""
    settings = _load_config(
        ctx,
        {
            **_signal_overrides(**pipeline),
            'inputs': [str(input_path)],
            'fit': {'etas': None if eta is None else [eta]},
            'sim': {
                'substeps': substeps,
                'min_cycle_separation_s': min_cycle_separation,
            },
        },
    )
    if not train_cycles:
        raise errors.ParameterError('--train-cycles needs a value')
    spec = library.load_library(settings.library.choice)
    pair = _read_pair(input_path, settings)
    threshold = settings.fit.etas[0]
    reports = utils.run_parallel(
        lambda cycles: sim.forecast(
            pair,
            cycles,
            spec,
            threshold,
            settings.sim.substeps,
            settings.sim.min_cycle_separation_s,
            settings.sim.smoothing_s,
            **_fit_kwargs(settings, spec),
        ),
        train_cycles,
        settings.threads,
    )
    payload = [
        report.model_dump(mode='json', exclude={'fit_seconds'})
        for report in reports
    ]
    timing = [
        {
            'train_cycles': report.train_cycles,
            'fit_seconds': report.fit_seconds,
        }
        for report in reports
    ]
    table = pandas.DataFrame(
        {
            'train_cycles': [report.train_cycles for report in reports],
            'rmse_train': [report.rmse_train for report in reports],
            'rmse_test': [report.rmse_test for report in reports],
        }
    )
    _write(
        'forecast',
        {
            'forecast.json': _json('forecast', payload, settings),
            'forecast-timing.json': _json('timing', timing, settings),
            'forecast.csv': _csv(table),
        },
        settings,
    )
    for report in reports:
        click.echo(
            f'train_cycles={report.train_cycles}\t'
            f'rmse_train={report.rmse_train:.6g}\t'
            f'rmse_test={report.rmse_test:.6g}\t'
            f'{report.fit_seconds * 1e3:.2f} ms'
        )


@main.command()
@click.argument('input_path', type=click.Path(path_type=pathlib.Path))
@click.option('--eta', type=float, help='Sparsity threshold')
@click.option(
    '--edge-rows', type=int, help='Rows dropped at both record ends'
)
@_pipeline_options
@click.pass_context
@_handle_errors
def reproduce(
    ctx: click.Context,
    input_path: pathlib.Path,
    eta: float | None,
    edge_rows: int | None,
    **pipeline: typing.Any,
) -> None:
    """Compare fits on each half of a record with the full fit"""
    settings = _load_config(
        ctx,
        {
            **_signal_overrides(**pipeline),
            'inputs': [str(input_path)],
            'fit': {
                'etas': None if eta is None else [eta],
                'edge_rows': edge_rows,
            },
        },
    )
    spec = library.load_library(settings.library.choice)
    pair = _read_pair(input_path, settings)
    report = sim.split_half_reproducibility(
        pair,
        spec,
        settings.fit.etas[0],
        settings.fit.edge_rows,
        **_fit_kwargs(settings, spec),
    )
    _write(
        'reproduce',
        {'reproducibility.json': _json('reproducibility', report, settings)},
        settings,
    )
    if report.comparable:
        click.echo(
            f'first half max {report.first_max:.4%}, second half max '
            f'{report.second_max:.4%}, overall {report.overall_max:.4%}'
        )
    else:
        click.echo('Not comparable: a segment fit eliminated every term')


def _dataset(path: pathlib.Path | None) -> list[models.FeatureVector]:
    if path is None:
        return classify.load_reference_dataset()
    return classify.read_features(path)


def _classifier_overrides(**options: typing.Any) -> dict[str, typing.Any]:
    return {'classifier': options}


def _region_outputs(
    model: models.ClassifierModel,
    data: list[models.FeatureVector],
    regions: typing.Sequence[str],
    resolution: int,
) -> Outputs:
    outputs: Outputs = {}
    for region in regions:
        if region == '3d':
            grid = classify.decision_regions(
                model, classify.feature_ranges(data), resolution
            )
        else:
            grid = classify.slice_regions(model, data, region, resolution)
        outputs[f'regions-{region}.csv'] = _csv(classify.regions_frame(grid))
    return outputs


def _objective_option(
    command: typing.Callable[..., None],
) -> typing.Callable[..., None]:
    return click.option(
        '--objective',
        type=click.Choice([item.value for item in models.Objective]),
        help='Training objective',
    )(
        click.option(
            '--l2', 'regularization_l2', type=float, help='L2 penalty'
        )(command)
    )


@main.command('classify')
@click.argument(
    'features_path',
    required=False,
    type=click.Path(path_type=pathlib.Path),
)
@click.option('--partitions', type=int, help='Random train/test partitions')
@click.option('--train-fraction', type=float, help='Training share')
@click.option('--seed', type=int, help='Partition sampling seed')
@click.option(
    '--stratified/--unstratified',
    default=None,
    help='Draw test sets proportionally per class',
)
@click.option(
    '--regions',
    type=click.Choice(REGION_CHOICES),
    multiple=True,
    help='Decision-region grids to export; 2-D planes fix the third '
    'feature at its dataset mean',
)
@click.option('--resolution', type=int, default=50, show_default=True)
@_objective_option
@click.pass_context
@_handle_errors
def classify_command(
    ctx: click.Context,
    features_path: pathlib.Path | None,
    partitions: int | None,
    train_fraction: float | None,
    seed: int | None,
    stratified: bool | None,
    regions: tuple[str, ...],
    resolution: int,
    objective: str | None,
    regularization_l2: float | None,
) -> None:
    """Evaluate the softmax classifier on a features file.

    Without FEATURES_PATH the bundled reference parameter table is used.

    """
    settings = _load_config(
        ctx,
        {
            **_classifier_overrides(
                partitions=partitions,
                train_fraction=train_fraction,
                stratified=stratified,
                objective=objective,
                regularization_l2=regularization_l2,
            ),
            'inputs': [str(features_path)] if features_path else None,
            'seed': seed,
        },
    )
    options = settings.classifier
    data = _dataset(features_path)
    report = classify.evaluate_partitions(
        data,
        options.partitions,
        options.train_fraction,
        settings.seed,
        options.stratified,
        options.objective,
        options.regularization_l2,
        options.max_iterations,
        settings.threads,
    )
    model = classify.train(
        data, options.objective, options.regularization_l2,
        options.max_iterations,
    )  # fmt: skip
    outputs = {
        'partitions.json': _json('partitions', report, settings),
        'classifier.json': _json('classifier', model, settings),
        **_region_outputs(model, data, regions, resolution),
    }
    _write('classify', outputs, settings)
    click.echo(
        f'accuracy {report.mean:.1%} +/- {report.std:.1%} over '
        f'{len(report.accuracies)} partitions '
        f'({report.train_size}/{report.test_size})'
    )


@main.command()
@click.argument(
    'features_path',
    required=False,
    type=click.Path(path_type=pathlib.Path),
)
@click.option(
    '--plane',
    'planes',
    type=click.Choice(REGION_CHOICES),
    multiple=True,
    help='Grids to export, all of them by default',
)
@click.option('--resolution', type=int, default=50, show_default=True)
@_objective_option
@click.pass_context
@_handle_errors
def regions(
    ctx: click.Context,
    features_path: pathlib.Path | None,
    planes: tuple[str, ...],
    resolution: int,
    objective: str | None,
    regularization_l2: float | None,
) -> None:
    """Export decision-region grids of a classifier trained on all rows"""
    settings = _load_config(
        ctx,
        {
            **_classifier_overrides(
                objective=objective, regularization_l2=regularization_l2
            ),
            'inputs': [str(features_path)] if features_path else None,
        },
    )
    options = settings.classifier
    data = _dataset(features_path)
    model = classify.train(
        data, options.objective, options.regularization_l2,
        options.max_iterations,
    )  # fmt: skip
    outputs = {
        'classifier.json': _json('classifier', model, settings),
        **_region_outputs(model, data, planes or REGION_CHOICES, resolution),
    }
    _write('regions', outputs, settings)


@main.command()
@click.argument(
    'features_path',
    required=False,
    type=click.Path(path_type=pathlib.Path),
)
@click.option(
    '--criterion',
    'criteria',
    type=click.Choice([item.value for item in models.DampingCriterion]),
    multiple=True,
    help='Underdamping criteria, all of them by default',
)
@click.pass_context
@_handle_errors
def damping(
    ctx: click.Context,
    features_path: pathlib.Path | None,
    criteria: tuple[str, ...],
) -> None:
    """Classify the damping regime of every parameter row"""
    settings = _load_config(
        ctx, {'inputs': [str(features_path)] if features_path else None}
    )
    data = _dataset(features_path)
    params = [classify.as_params(row) for row in data]
    selected = (
        [models.DampingCriterion(value) for value in criteria]
        if criteria
        else list(models.DampingCriterion)
    )
    table = pandas.DataFrame(
        {
            'subject_id': [row.subject_id for row in data],
            'label': [row.label.display_name for row in data],
            'a': [item.a for item in params],
            'b': [item.b for item in params],
        }
    )
    summary: dict[str, dict[str, int]] = {}
    for criterion in selected:
        rows = sim.damping_table(params, criterion)
        table[criterion.value] = [row.regime.value for row in rows]
        counts = table[criterion.value].value_counts()
        summary[criterion.value] = {
            regime.value: int(counts.get(regime.value, 0))
            for regime in models.DampingRegime
        }
    _write(
        'damping',
        {
            'damping.csv': _csv(table),
            'damping.json': _json('damping', summary, settings),
        },
        settings,
    )
    for criterion, counts in summary.items():
        click.echo(
            f'{criterion}: '
            + ', '.join(f'{count} {name}' for name, count in counts.items())
        )


@main.command('synth')
@click.argument('output_path', type=click.Path(path_type=pathlib.Path))
@click.option('--a', 'a', type=float, default=27.5, show_default=True)
@click.option('--b', 'b', type=float, default=455.0, show_default=True)
@click.option(
    '--eps', 'epsilon', type=float, default=3.55e4, show_default=True
)
@click.option(
    '--model',
    'model_path',
    type=click.Path(path_type=pathlib.Path),
    help='Model JSON written by fit, used instead of --a/--b/--eps',
)
@click.option(
    '--duration',
    type=float,
    default=5.0,
    show_default=True,
    help='Record length, six periods of the default fundamental',
)
@click.option('--dt', type=float, default=0.005, show_default=True)
@click.option(
    '--fundamental-hz', type=float, default=1.2, show_default=True
)
@click.option('--harmonics', type=int, default=3, show_default=True)
@click.option('--amplitude', type=float, default=1.0, show_default=True)
@click.option('--noise-pressure', type=float, default=0.0, show_default=True)
@click.option('--noise-velocity', type=float, default=0.0, show_default=True)
@click.option(
    '--warmup',
    type=float,
    default=3.0,
    show_default=True,
    help='Seconds integrated and discarded before the record starts',
)
@click.option('--seed', type=int, help='Noise seed')
@click.pass_context
@_handle_errors
def synth_command(
    ctx: click.Context,
    output_path: pathlib.Path,
    a: float,
    b: float,
    epsilon: float,
    model_path: pathlib.Path | None,
    duration: float,
    dt: float,
    fundamental_hz: float,
    harmonics: int,
    amplitude: float,
    noise_pressure: float,
    noise_velocity: float,
    warmup: float,
    seed: int | None,
) -> None:
    """Generate a synthetic pressure/velocity record as CSV"""
    settings = _load_config(ctx, {'seed': seed})
    model: models.SparseModel | models.LinearParams
    if model_path is not None:
        model = _read_model(model_path)
    else:
        model = _validated(models.LinearParams, a=a, b=b, epsilon=epsilon)
    spec = _validated(
        models.GeneratorSpec,
        model=model,
        forcing=synth.cardiac_forcing(fundamental_hz, harmonics, amplitude),
        duration_s=duration,
        dt=dt,
        noise_std_pressure=noise_pressure,
        noise_std_velocity=noise_velocity,
        rng_seed=settings.seed,
        warmup_s=warmup,
    )
    pair = synth.generate(spec)
    fingerprint = utils.fingerprint(spec)
    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        synth.to_csv(
            pair,
            output_path,
            {
                'schema_version': utils.SCHEMA_VERSION,
                'config_fingerprint': fingerprint,
            },
        )
    except OSError as err:
        raise errors.DataFileError(f'Cannot write {output_path}') from err
    click.echo(
        f'{len(pair)} samples, pressure amplitude '
        f'{pair.pressure.amplitude:.6g} -> {output_path}'
    )


def _validated(
    model: type[pydantic.BaseModel], **values: typing.Any
) -> typing.Any:
    try:
        return model(**values)
    except pydantic.ValidationError as err:
        raise errors.ParameterError(str(err)) from err


def _read_model(path: pathlib.Path) -> models.SparseModel:
    try:
        document = config.read_config_file(path)
        return models.SparseModel.model_validate(document['data']['model'])
    except (KeyError, TypeError, pydantic.ValidationError) as err:
        raise errors.InputError(
            f'{path} does not hold a fitted model'
        ) from err


@main.command()
@click.argument('input_path', type=click.Path(path_type=pathlib.Path))
@click.option('--eta', type=float, help='Sparsity threshold')
@click.option('--runs', type=int, default=7, show_default=True)
@click.option('--iterations', type=int, default=1000, show_default=True)
@_pipeline_options
@click.pass_context
@_handle_errors
def bench(
    ctx: click.Context,
    input_path: pathlib.Path,
    eta: float | None,
    runs: int,
    iterations: int,
    **pipeline: typing.Any,
) -> None:
    """Time repeated fits of one record"""
    settings = _load_config(
        ctx,
        {
            **_signal_overrides(**pipeline),
            'inputs': [str(input_path)],
            'fit': {'etas': None if eta is None else [eta]},
        },
    )
    spec = library.load_library(settings.library.choice)
    pair = _read_pair(input_path, settings)
    theta = library.design_matrix_for(pair, spec)
    report = stls.bench_fit(theta, settings.fit.etas[0], runs, iterations)
    _write('bench', {'bench.json': _json('bench', report, settings)}, settings)
    per_fit = numpy.array(report.seconds) / iterations * 1e6
    click.echo(
        f'{runs} runs of {iterations} fits: median '
        f'{report.median:.4g} s ({numpy.median(per_fit):.1f} us per fit)'
    )
