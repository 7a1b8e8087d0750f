import pathlib
import unittest

import numpy
import orjson
import pandas
from click import testing

from hemosindy import cli
from tests import common


class CliTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self.runner = testing.CliRunner()
        self.enterContext(self.runner.isolated_filesystem())

    def invoke(self, *args: str, exit_code: int = 0) -> testing.Result:
        result = self.runner.invoke(cli.main, list(args))
        self.assertEqual(result.exit_code, exit_code, result.output)
        return result

    def read_json(self, path: str) -> dict:
        return orjson.loads(pathlib.Path(path).read_bytes())

    def synth(self, path: str, *args: str) -> None:
        self.invoke('synth', path, *args)


class SynthCommandTestCase(CliTestCase):
    def test_writes_record_and_sidecar(self) -> None:
        self.synth('record.csv', '--duration', '2', '--seed', '3')
        frame = pandas.read_csv('record.csv')
        self.assertEqual(list(frame.columns), ['t', 'p', 'v'])
        self.assertEqual(len(frame), 401)
        sidecar = self.read_json('record.json')
        self.assertEqual(sidecar['schema_version'], 1)
        self.assertEqual(len(sidecar['config_fingerprint']), 64)

    def test_invalid_parameters(self) -> None:
        result = self.invoke(
            'synth', 'record.csv', '--dt', '-1', exit_code=2
        )
        self.assertIn('Error:', result.output)
        self.assertFalse(pathlib.Path('record.csv').exists())


class FitCommandTestCase(CliTestCase):
    def setUp(self) -> None:
        super().setUp()
        self.synth('record.csv')

    def test_recovers_parameters(self) -> None:
        self.invoke(
            '-o', 'out', 'fit', 'record.csv',
            '--library', 'linear', '--eta', '5.0',
        )  # fmt: skip
        document = self.read_json('out/model-eta5.json')
        self.assertEqual(document['kind'], 'fit')
        self.assertEqual(document['data']['status'], 'ok')
        params = document['data']['linear_params']
        numpy.testing.assert_allclose(
            [params['a'], params['b'], params['epsilon']],
            common.reference_params().as_array(),
            rtol=0.01,
        )

    def test_threshold_sweep(self) -> None:
        self.invoke(
            '-o', 'out', 'fit', 'record.csv',
            '--library', 'linear', '--etas', '0.1,1,5',
        )  # fmt: skip
        for label in ('0.1', '1', '5'):
            path = pathlib.Path(f'out/model-eta{label}.json')
            self.assertTrue(path.exists())
        sweep = pandas.read_csv('out/sweep.csv')
        self.assertEqual(list(sweep['eta']), [0.1, 1.0, 5.0])
        self.assertEqual(list(sweep['active_count']), [3, 3, 3])
        manifest = self.read_json('out/manifest.json')
        self.assertEqual(manifest['data']['command'], 'fit')
        self.assertIn('sweep.csv', manifest['data']['files'])

    def test_phase_portrait(self) -> None:
        self.invoke(
            '-o', 'out', 'fit', 'record.csv',
            '--library', 'linear', '--phase-portrait',
        )  # fmt: skip
        frame = pandas.read_csv('out/phase-eta5.csv')
        self.assertEqual(list(frame.columns), ['p_meas', 'v_meas', 'p_sim'])

    def test_eta_and_etas_conflict(self) -> None:
        self.invoke(
            'fit', 'record.csv', '--eta', '1', '--etas', '1,2', exit_code=2
        )

    def test_negative_threshold(self) -> None:
        result = self.invoke(
            '-o', 'out', 'fit', 'record.csv', '--eta', '-1', exit_code=2
        )
        self.assertIn('Error:', result.output)
        self.assertFalse(pathlib.Path('out').exists())

    def test_missing_input(self) -> None:
        self.invoke('-o', 'out', 'fit', 'missing.csv', exit_code=3)
        self.assertFalse(pathlib.Path('out').exists())

    def test_config_file(self) -> None:
        pathlib.Path('run.json').write_bytes(
            orjson.dumps(
                {
                    'library': {'choice': 'linear'},
                    'signal': {'subtract_mean': False},
                    'fit': {'etas': [2.0]},
                }
            )
        )
        self.invoke('--config', 'run.json', '-o', 'out', 'fit', 'record.csv')
        document = self.read_json('out/model-eta2.json')
        self.assertEqual(
            document['data']['model']['term_names'], ['dp', 'p', 'v']
        )

    def test_synthesize_from_fitted_model(self) -> None:
        self.invoke(
            '-o', 'out', 'fit', 'record.csv',
            '--library', 'linear',
        )  # fmt: skip
        self.synth('replayed.csv', '--model', 'out/model-eta5.json')
        original = pandas.read_csv('record.csv')
        replayed = pandas.read_csv('replayed.csv')
        numpy.testing.assert_allclose(
            replayed['p'],
            original['p'],
            atol=0.01 * original['p'].abs().max(),
        )


class ProtocolCommandsTestCase(CliTestCase):
    def setUp(self) -> None:
        super().setUp()
        self.synth(
            'periodic.csv',
            '--fundamental-hz', str(common.FUNDAMENTAL_HZ),
            '--duration', str((8 * common.PERIOD_SAMPLES - 1) * common.DT),
            '--warmup', '5',
        )  # fmt: skip

    def test_forecast(self) -> None:
        self.invoke('-o', 'out', 'forecast', 'periodic.csv')
        table = pandas.read_csv('out/forecast.csv')
        self.assertEqual(list(table['train_cycles']), [1, 2, 3])
        document = self.read_json('out/forecast.json')
        self.assertEqual(len(document['data']), 3)
        self.assertNotIn('fit_seconds', document['data'][0])
        timing = self.read_json('out/forecast-timing.json')['data']
        self.assertEqual([row['train_cycles'] for row in timing], [1, 2, 3])
        for row in timing:
            self.assertGreaterEqual(row['fit_seconds'], 0.0)

    def test_forecast_short_record(self) -> None:
        self.synth('short.csv', '--duration', '1')
        result = self.invoke(
            '-o', 'short', 'forecast', 'short.csv', exit_code=2
        )
        self.assertIn('cardiac cycles', result.output)

    def test_reproduce(self) -> None:
        self.invoke('-o', 'out', 'reproduce', 'periodic.csv')
        document = self.read_json('out/reproducibility.json')
        self.assertTrue(document['data']['comparable'])
        self.assertLessEqual(document['data']['overall_max'], 1e-3)

    def test_bench(self) -> None:
        self.invoke(
            '-o', 'out', 'bench', 'periodic.csv',
            '--runs', '2', '--iterations', '1',
        )  # fmt: skip
        document = self.read_json('out/bench.json')
        self.assertEqual(len(document['data']['seconds']), 2)
        self.assertTrue(document['data']['consistent'])


class ClassifierCommandsTestCase(CliTestCase):
    def test_classify_is_deterministic(self) -> None:
        args = ('classify', '--partitions', '3', '--seed', '7')
        self.invoke('-o', 'first', '--threads', '1', *args)
        self.invoke('-o', 'second', '--threads', '2', *args)
        for name in ('partitions.json', 'classifier.json'):
            self.assertEqual(
                pathlib.Path('first', name).read_bytes(),
                pathlib.Path('second', name).read_bytes(),
            )
        report = self.read_json('first/partitions.json')['data']
        self.assertEqual(len(report['accuracies']), 3)
        self.assertEqual(report['seed'], 7)

    def test_classify_regions(self) -> None:
        self.invoke(
            '-o', 'out', 'classify', '--partitions', '1',
            '--regions', 'ab', '--regions', '3d', '--resolution', '4',
        )  # fmt: skip
        self.assertEqual(len(pandas.read_csv('out/regions-ab.csv')), 16)
        self.assertEqual(len(pandas.read_csv('out/regions-3d.csv')), 64)

    def test_features_file(self) -> None:
        pathlib.Path('features.csv').write_text(
            common.load_test_data('cases.yaml')['features']
        )
        self.invoke(
            '-o', 'out', 'regions', 'features.csv', '--resolution', '3'
        )
        for plane in ('3d', 'ab', 'ea', 'eb'):
            self.assertTrue(pathlib.Path(f'out/regions-{plane}.csv').exists())

    def test_malformed_features(self) -> None:
        pathlib.Path('features.csv').write_text(
            'a,b,epsilon,label\nx,1,2,AA\n'
        )
        result = self.invoke('regions', 'features.csv', exit_code=2)
        self.assertIn('line 2', result.output)

    def test_damping(self) -> None:
        self.invoke('-o', 'out', 'damping')
        expected = common.load_test_data('cases.yaml')['reference_damping']
        self.assertEqual(self.read_json('out/damping.json')['data'], expected)
        table = pandas.read_csv('out/damping.csv')
        self.assertEqual(len(table), 20)
