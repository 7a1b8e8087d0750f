import itertools
import unittest

import numpy

from hemosindy import errors, library, models, signal, stls, synth
from tests import common

FOUR_TERMS = models.LibrarySpec(
    terms=[[0, 1, 0], [1, 0, 0], [2, 0, 0], [0, 0, 1]]
)
CONSTANT_AND_P = models.LibrarySpec(terms=[[0, 0, 0], [1, 0, 0]])


def _design(
    coefficients: list[float], rows: int = 200, seed: int = 0
) -> models.DesignMatrix:
    columns = numpy.random.default_rng(seed).normal(size=(rows, 4))
    return models.DesignMatrix(
        columns=columns,
        terms=FOUR_TERMS,
        target=columns @ numpy.array(coefficients),
    )


def _model(
    coefficients: list[float], terms: models.LibrarySpec | None = None
) -> models.SparseModel:
    values = numpy.array(coefficients)
    return models.SparseModel(
        coefficients=values,
        terms=terms or library.linear_library(),
        threshold=0.0,
        iterations=1,
        residual_norm=0.0,
        active_count=int(numpy.count_nonzero(values)),
    )


class LeastSquaresTestCase(unittest.TestCase):
    def test_exact_solution(self) -> None:
        theta = _design([2.0, 0.7, -3.0, 0.5])
        numpy.testing.assert_allclose(
            stls.least_squares(theta), [2.0, 0.7, -3.0, 0.5], rtol=1e-10
        )

    def test_inactive_columns_are_zero(self) -> None:
        theta = _design([2.0, 0.0, -3.0, 0.5])
        active = numpy.array([True, False, True, True])
        result = stls.least_squares(theta, active)
        self.assertEqual(result[1], 0.0)
        numpy.testing.assert_allclose(result[[0, 2, 3]], [2.0, -3.0, 0.5])

    def test_dependent_columns(self) -> None:
        theta = _design([1.0, 1.0, 1.0, 1.0])
        columns = numpy.array(theta.columns)
        columns[:, 2] = 2.0 * columns[:, 0]
        singular = models.DesignMatrix(
            columns=columns, terms=FOUR_TERMS, target=theta.target
        )
        with self.assertRaises(errors.SingularMatrixError) as context:
            stls.least_squares(singular)
        self.assertEqual(len(context.exception.columns), 1)

    def test_zero_column(self) -> None:
        theta = _design([1.0, 1.0, 1.0, 1.0])
        columns = numpy.array(theta.columns)
        columns[:, 3] = 0.0
        with self.assertRaises(errors.SingularMatrixError) as context:
            stls.least_squares(
                models.DesignMatrix(
                    columns=columns, terms=FOUR_TERMS, target=theta.target
                )
            )
        self.assertEqual(context.exception.columns, ['v'])

    def test_no_active_column(self) -> None:
        with self.assertRaises(errors.ParameterError):
            stls.least_squares(_design([1.0] * 4), numpy.zeros(4, bool))

    def test_agrees_with_normal_equations(self) -> None:
        columns = numpy.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        target = numpy.array([1.0, 2.0, 3.0])
        theta = models.DesignMatrix(
            columns=columns, terms=CONSTANT_AND_P, target=target
        )
        result = stls.least_squares(theta)
        expected = numpy.linalg.solve(columns.T @ columns, columns.T @ target)
        numpy.testing.assert_allclose(result, expected, rtol=1e-12)
        numpy.testing.assert_allclose(result, [1.0, 1.0], rtol=1e-12)
        self.assertLess(stls.residual_norm(theta, result), 1e-12)

    def test_orthogonal_target(self) -> None:
        target = numpy.array([1.0, -2.0, 1.0])
        theta = models.DesignMatrix(
            columns=[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]],
            terms=CONSTANT_AND_P,
            target=target,
        )
        result = stls.least_squares(theta)
        numpy.testing.assert_allclose(result, 0.0, atol=1e-12)
        self.assertAlmostEqual(
            stls.residual_norm(theta, result),
            float(numpy.linalg.norm(target)),
            places=12,
        )


class StlsFitTestCase(unittest.TestCase):
    def test_recovers_sparse_coefficients(self) -> None:
        model = stls.stls_fit(_design([2.0, 0.0, -3.0, 0.5]), 0.1)
        self.assertEqual(model.active_terms, ['dp', 'p^2', 'v'])
        numpy.testing.assert_allclose(
            model.coefficients, [2.0, 0.0, -3.0, 0.5], atol=1e-10
        )
        self.assertLess(model.residual_norm, 1e-9)

    def test_small_coefficient_is_eliminated_and_refit(self) -> None:
        theta = _design([2.0, 0.05, -3.0, 0.5])
        model = stls.stls_fit(theta, 0.1)
        self.assertEqual(model.coefficient(1, 0, 0), 0.0)
        self.assertEqual(model.iterations, 2)
        kept = theta.columns[:, [0, 2, 3]]
        expected, *_ = numpy.linalg.lstsq(kept, theta.target, rcond=None)
        numpy.testing.assert_allclose(
            model.coefficients[[0, 2, 3]], expected, rtol=1e-9
        )

    def test_fixed_point(self) -> None:
        theta = _design([2.0, 0.05, -3.0, 0.5])
        model = stls.stls_fit(theta, 0.1)
        refit = stls.least_squares(theta, model.active)
        numpy.testing.assert_allclose(
            model.coefficients, refit, rtol=1e-12
        )
        for value in model.coefficients[model.active]:
            self.assertGreaterEqual(abs(value), 0.1)

    def test_exempt_term_survives(self) -> None:
        model = stls.stls_fit(
            _design([2.0, 0.0, -3.0, 0.05]), 0.1, exempt=[3]
        )
        self.assertIn('v', model.active_terms)
        self.assertAlmostEqual(model.coefficient(0, 0, 1), 0.05, places=9)
        self.assertEqual(model.exempt, (3,))

    def test_exempt_out_of_range(self) -> None:
        with self.assertRaises(errors.ParameterError):
            stls.stls_fit(_design([1.0] * 4), 0.1, exempt=[4])

    def test_zero_threshold_keeps_everything(self) -> None:
        model = stls.stls_fit(_design([2.0, 0.7, -3.0, 0.5]), 0.0)
        self.assertEqual(model.active_count, 4)
        self.assertEqual(model.iterations, 1)

    def test_huge_threshold_gives_empty_model(self) -> None:
        theta = _design([2.0, 0.7, -3.0, 0.5])
        model = stls.stls_fit(theta, 1e9)
        self.assertTrue(model.is_empty)
        numpy.testing.assert_array_equal(model.coefficients, 0.0)
        self.assertAlmostEqual(
            model.residual_norm, float(numpy.linalg.norm(theta.target))
        )

    def test_negative_threshold(self) -> None:
        for eta in (-1.0, float('nan')):
            with self.assertRaises(errors.ParameterError):
                stls.stls_fit(_design([1.0] * 4), eta)

    def test_normalized_threshold(self) -> None:
        theta = _design([2.0, 0.05, -3.0, 0.5])
        model = stls.stls_fit(theta, 0.05, normalize=True)
        self.assertTrue(model.normalized)
        self.assertEqual(model.coefficient(1, 0, 0), 0.0)
        self.assertEqual(model.active_count, 3)

    def test_residual_grows_as_terms_are_eliminated(self) -> None:
        theta = library.design_matrix_for(
            common.transient_pair(), library.default_library()
        )
        residuals = [stls.residual_norm(theta, stls.least_squares(theta))]
        with self.assertLogs('hemosindy.stls', 'DEBUG') as logs:
            model = stls.stls_fit(theta, 5.0)
        residuals.extend(
            record.args[2]
            for record in logs.records
            if record.msg.startswith('Pass')
        )
        self.assertEqual(len(residuals), model.iterations)
        self.assertGreater(model.iterations, 1)
        for before, after in itertools.pairwise(residuals):
            self.assertGreaterEqual(after, before * (1.0 - 1e-12))
        self.assertAlmostEqual(
            residuals[-1], model.residual_norm, delta=1e-9 * residuals[-1]
        )


class BestSubsetTestCase(unittest.TestCase):
    @staticmethod
    def _best_subset(theta: models.DesignMatrix, eta: float) -> float:
        """Smallest residual over every subset whose coefficients clear eta"""
        best = float(numpy.linalg.norm(theta.target))
        count = len(theta.terms)
        for size in range(1, count + 1):
            for subset in itertools.combinations(range(count), size):
                columns = theta.columns[:, list(subset)]
                values, *_ = numpy.linalg.lstsq(
                    columns, theta.target, rcond=None
                )
                if numpy.all(numpy.abs(values) >= eta):
                    best = min(
                        best,
                        float(
                            numpy.linalg.norm(theta.target - columns @ values)
                        ),
                    )
        return best

    def test_never_beats_exhaustive_search(self) -> None:
        rng = numpy.random.default_rng(5)
        for seed in range(10):
            clean = _design([2.0, 0.3, -3.0, 0.5], rows=50, seed=seed)
            theta = models.DesignMatrix(
                columns=clean.columns,
                terms=FOUR_TERMS,
                target=clean.target + rng.normal(scale=0.5, size=50),
            )
            for eta in (0.1, 0.4, 1.0, 2.5):
                with self.subTest(seed=seed, eta=eta):
                    model = stls.stls_fit(theta, eta)
                    self.assertGreaterEqual(
                        model.residual_norm,
                        self._best_subset(theta, eta) * (1.0 - 1e-9),
                    )

    def test_matches_exhaustive_search_without_noise(self) -> None:
        for seed in range(5):
            theta = _design([2.0, 0.0, -3.0, 0.5], rows=50, seed=seed)
            for eta in (0.1, 0.4):
                with self.subTest(seed=seed, eta=eta):
                    model = stls.stls_fit(theta, eta)
                    self.assertAlmostEqual(
                        model.residual_norm,
                        self._best_subset(theta, eta),
                        delta=1e-9,
                    )


class OscillatorRecoveryTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self.pair = common.transient_pair()
        self.expected = common.reference_params()

    def test_default_library(self) -> None:
        theta = library.design_matrix_for(
            self.pair, library.default_library()
        )
        model = stls.stls_fit(theta, 5.0)
        self.assertEqual(set(model.active_terms), {'dp', 'p', 'v'})
        params = stls.extract_linear(model)
        numpy.testing.assert_allclose(
            params.as_array(), self.expected.as_array(), rtol=0.01
        )

    def test_sweep(self) -> None:
        theta = library.design_matrix_for(
            self.pair, library.default_library()
        )
        fits = stls.threshold_sweep(theta, [0.0, 5.0])
        self.assertEqual([fit.active_count for fit in fits], [9, 3])
        self.assertEqual([fit.threshold for fit in fits], [0.0, 5.0])

    def test_noisy_periodic_record(self) -> None:
        pair = signal.preprocess(
            common.periodic_pair(noise=0.005), cutoff_hz=10.0
        )
        theta = library.design_matrix_for(
            pair, library.linear_library(), edge_rows=2
        )
        params = stls.extract_linear(stls.stls_fit(theta, 5.0))
        numpy.testing.assert_allclose(
            params.as_array(), self.expected.as_array(), rtol=0.05
        )

    def test_noisy_sweep_ends_at_linear_model(self) -> None:
        pair = signal.preprocess(
            common.periodic_pair(noise=0.005), cutoff_hz=10.0
        )
        theta = library.design_matrix_for(
            pair, library.default_library(), edge_rows=2
        )
        fits = stls.threshold_sweep(theta, [0.1, 1.0, 5.0])
        counts = [fit.active_count for fit in fits]
        self.assertEqual(counts, sorted(counts, reverse=True))
        self.assertEqual(set(fits[-1].active_terms), {'dp', 'p', 'v'})

    def test_random_oscillators(self) -> None:
        rng = numpy.random.default_rng(11)
        for draw in range(20):
            params = models.LinearParams(
                a=rng.uniform(15.0, 45.0),
                b=rng.uniform(250.0, 700.0),
                epsilon=rng.uniform(2e4, 5e4),
            )
            pair = synth.generate(
                models.GeneratorSpec(
                    model=params,
                    forcing=synth.cardiac_forcing(),
                    duration_s=5.0,
                    dt=common.DT,
                )
            )
            theta = library.design_matrix_for(
                pair, library.default_library()
            )
            with self.subTest(draw=draw, params=params):
                model = stls.stls_fit(theta, 5.0)
                self.assertEqual(set(model.active_terms), {'dp', 'p', 'v'})


class ThresholdSweepTestCase(unittest.TestCase):
    def test_threads_do_not_change_results(self) -> None:
        theta = _design([2.0, 0.05, -3.0, 0.5])
        etas = [0.0, 0.1, 1.0, 2.5, 10.0]
        serial = stls.threshold_sweep(theta, etas)
        threaded = stls.threshold_sweep(theta, etas, threads=2)
        for first, second in zip(serial, threaded, strict=True):
            numpy.testing.assert_array_equal(
                first.coefficients, second.coefficients
            )
        self.assertEqual(
            [fit.active_count for fit in serial], [4, 3, 2, 1, 0]
        )

    def test_invalid_thresholds(self) -> None:
        theta = _design([1.0] * 4)
        with self.assertRaises(errors.ParameterError):
            stls.threshold_sweep(theta, [])
        with self.assertRaises(errors.ParameterError):
            stls.threshold_sweep(theta, [1.0, -1.0])


class LinearParamsTestCase(unittest.TestCase):
    def test_round_trip(self) -> None:
        params = common.reference_params()
        model = stls.linear_model(params)
        numpy.testing.assert_array_equal(
            model.coefficients, [-27.5, -455.0, 35500.0]
        )
        self.assertEqual(stls.extract_linear(model), params)

    def test_from_wider_library(self) -> None:
        model = _model(
            [-27.5, 0.0, 0.0, -455.0, 0.0, 0.0, 0.0, 0.0, 35500.0],
            library.default_library(),
        )
        self.assertEqual(stls.extract_linear(model).epsilon, 35500.0)

    def test_other_structure(self) -> None:
        with self.assertRaises(errors.ModelStructureError) as context:
            stls.extract_linear(_model([-27.5, -455.0, 0.0]))
        self.assertEqual(context.exception.active, ['dp', 'p'])
        nonlinear = _model(
            [-27.5, 1.0, 0.0, -455.0, 0.0, 0.0, 0.0, 0.0, 35500.0],
            library.default_library(),
        )
        with self.assertRaises(errors.ModelStructureError):
            stls.extract_linear(nonlinear)


class PredictionTestCase(unittest.TestCase):
    def setUp(self) -> None:
        self.theta = library.design_matrix_for(
            common.transient_pair(duration_s=1.0), library.linear_library()
        )

    def test_predict_derivative(self) -> None:
        model = stls.linear_model(common.reference_params())
        numpy.testing.assert_allclose(
            stls.predict_derivative(model, self.theta),
            self.theta.columns @ model.coefficients,
        )
        self.assertGreaterEqual(
            stls.derivative_fit_error(model, self.theta), 0.0
        )

    def test_library_mismatch(self) -> None:
        model = _model([0.0] * 9, library.default_library())
        with self.assertRaises(errors.InputError):
            stls.predict_derivative(model, self.theta)


class SummaryTestCase(unittest.TestCase):
    def test_hand_computed(self) -> None:
        summary = stls.coefficient_summary(
            [_model([1.0, 2.0, 0.0]), _model([3.0, 2.0, 0.0])]
        )
        self.assertEqual([row.term for row in summary], ['dp', 'p', 'v'])
        self.assertEqual([row.mean for row in summary], [2.0, 2.0, 0.0])
        self.assertEqual([row.std for row in summary], [1.0, 0.0, 0.0])
        self.assertEqual(
            [row.active_fraction for row in summary], [1.0, 1.0, 0.0]
        )

    def test_invalid_groups(self) -> None:
        with self.assertRaises(errors.InputError):
            stls.coefficient_summary([])
        with self.assertRaises(errors.InputError):
            stls.coefficient_summary(
                [
                    _model([1.0, 2.0, 0.0]),
                    _model([0.0] * 9, library.default_library()),
                ]
            )


class BenchTestCase(unittest.TestCase):
    def test_report(self) -> None:
        report = stls.bench_fit(
            _design([2.0, 0.05, -3.0, 0.5]), 0.1, runs=3, iterations=2
        )
        self.assertEqual(len(report.seconds), 3)
        self.assertEqual(report.iterations, 2)
        self.assertTrue(report.consistent)
        self.assertGreater(report.mean, 0.0)

    def test_linear_library_is_faster(self) -> None:
        pair = common.transient_pair()
        linear, general = (
            stls.bench_fit(
                library.design_matrix_for(pair, spec),
                5.0,
                runs=5,
                iterations=20,
            ).median
            for spec in (library.linear_library(), library.default_library())
        )
        self.assertLess(linear, general)

    def test_invalid_counts(self) -> None:
        with self.assertRaises(errors.ParameterError):
            stls.bench_fit(_design([1.0] * 4), 0.1, runs=0)
