import json
import math
import unittest

import numpy as np

from slidesolve.errors import *
from slidesolve.config import VerifyConfig
from slidesolve.problem import load_problem, problem_from_dict
from slidesolve.problems import example_path
from slidesolve.grid import TimeGrid, StateGrid
from slidesolve.verification import *

EXAMPLE1_C = [0.98467, 0.93868]
EXAMPLE2_P = [0.1836729, 0.2016907, 0.1139969, 0.4974675]


def example_dict(name: str) -> dict:
    with open(example_path(name), "rt") as f:
        return json.load(f)


def resting_problem():
    return problem_from_dict({
        "n": 2, "m": 1, "A": [[0, 0], [0, 0]], "gain_upper": [1], "T": 1, "x0": [1, 2],
        "endpoint": {"2": 2},
        "surface": {"rows": [{"coeffs": [1, {"param": 1}], "offset": 0}], "params": [1]}
    })


class TestRk4(unittest.TestCase):
    def test_fourth_order(self):
        errors = []
        for h in (1e-2, 5e-3):
            times, states = rk4_fixed(lambda t, x: x, [1.0], 1.0, h)
            self.assertEqual(times[-1], 1.0)
            errors.append(abs(states[-1, 0] - math.e))
        self.assertGreaterEqual(errors[0] / errors[1], 8.0)

    def test_step_lands_on_horizon(self):
        times, states = rk4_fixed(lambda t, x: np.zeros_like(x), [3.0, 4.0], 1.0, 0.3)
        self.assertEqual(len(times), 5)
        self.assertAlmostEqual(times[-1], 1.0, delta=1e-15)
        np.testing.assert_array_equal(states[-1], [3.0, 4.0])

    def test_divergence(self):
        with self.assertRaises(StiffnessError):
            rk4_fixed(lambda t, x: x ** 2, [1e200], 1.0, 0.1)

    def test_bad_step(self):
        with self.assertRaises(ValueError):
            rk4_fixed(lambda t, x: x, [1.0], 1.0, 0.0)


class TestClosedLoop(unittest.TestCase):
    def test_example1_endpoint(self):
        spec = load_problem(example_path("example1"))
        grid = TimeGrid(nodes=201, horizon=1.0)
        state = integrate_closed_loop(spec, grid, EXAMPLE1_C)
        self.assertIsInstance(state, StateGrid)
        self.assertAlmostEqual(state.final[0], -0.00431, delta=2e-3)
        np.testing.assert_allclose(state.values[0], [-0.98467 * 4 + 0.93868, 4.0, 6.0], atol=1e-12)
        # x1 follows the surface at every node
        np.testing.assert_allclose(state.values[:, 0], -0.98467 * state.values[:, 1] + 0.93868, atol=1e-12)

    def test_rk4_matches_rk45(self):
        spec = load_problem(example_path("example1"))
        grid = TimeGrid(nodes=101, horizon=1.0)
        rk45 = integrate_closed_loop(spec, grid, EXAMPLE1_C)
        rk4 = integrate_closed_loop(spec, grid, EXAMPLE1_C, VerifyConfig(method="rk4", h=1e-3))
        np.testing.assert_allclose(rk4.values, rk45.values, atol=1e-6)

    def test_resting_system(self):
        spec = resting_problem()
        grid = TimeGrid(nodes=11, horizon=1.0)
        state = integrate_closed_loop(spec, grid, [1.0])
        np.testing.assert_allclose(state.values, np.tile([-2.0, 2.0], (11, 1)), atol=1e-12)

    def test_singular_surface(self):
        data = example_dict("example1")
        data["surface"]["rows"][0]["coeffs"] = [{"param": 1}, 1, 0]
        spec = problem_from_dict(data)
        with self.assertRaises(SurfaceReductionError):
            integrate_closed_loop(spec, TimeGrid(nodes=11, horizon=1.0), [0.0, 1.0])

    def test_example2_endpoints(self):
        spec = load_problem(example_path("example2"))
        grid = TimeGrid(nodes=201, horizon=0.2)
        state = integrate_closed_loop(spec, grid, EXAMPLE2_P)
        np.testing.assert_allclose(state.final, [0.54513, 2.50537, 2.95221], atol=1e-2)
        np.testing.assert_array_equal(state.values[0], [2.0, -2.0, 2.0])


class TestInclusionResidual(unittest.TestCase):
    def test_forward_difference(self):
        grid = TimeGrid(nodes=5, horizon=1.0)
        x = np.stack([grid.times, grid.times ** 2], axis=1)
        z = forward_difference(grid, x)
        np.testing.assert_allclose(z[:, 0], 1.0)
        np.testing.assert_allclose(z[:, 1], [0.25, 0.75, 1.25, 1.75, 1.75])

    def test_resting_system_has_no_residual(self):
        spec = resting_problem()
        grid = TimeGrid(nodes=11, horizon=1.0)
        out = inclusion_residual(spec, grid, np.tile([-2.0, 2.0], (11, 1)), [1.0])
        self.assertEqual(out.max_inclusion_residual, 0.0)
        self.assertEqual(out.max_surface_residual, 0.0)

    def test_example1_trajectory(self):
        spec = load_problem(example_path("example1"))
        grid = TimeGrid(nodes=2001, horizon=1.0)
        state = integrate_closed_loop(spec, grid, EXAMPLE1_C)
        out = inclusion_residual(spec, grid, state, EXAMPLE1_C)
        self.assertLessEqual(out.max_inclusion_residual, 1e-2)
        self.assertLessEqual(out.max_surface_residual, 1e-9)

        x = state.values.copy()
        x[:, 0] += 10 * grid.times
        perturbed = inclusion_residual(spec, grid, x, EXAMPLE1_C)
        self.assertGreater(perturbed.max_inclusion_residual, 1.0)

    def test_smooth_control_has_no_surface_residual(self):
        spec = load_problem(example_path("example2"))
        grid = TimeGrid(nodes=201, horizon=0.2)
        state = integrate_closed_loop(spec, grid, EXAMPLE2_P)
        out = inclusion_residual(spec, grid, state, EXAMPLE2_P)
        self.assertIsNone(out.max_surface_residual)
        self.assertGreaterEqual(out.max_inclusion_residual, 0.0)


class TestVerifySolution(unittest.TestCase):
    def test_example1_passes(self):
        spec = load_problem(example_path("example1"))
        grid = TimeGrid(nodes=201, horizon=1.0)
        report = verify_solution(spec, grid, EXAMPLE1_C)
        self.assertTrue(report.passed)
        self.assertEqual(list(report.endpoint_errors), [0])
        self.assertLessEqual(report.max_endpoint_error, 1e-2)
        self.assertIsNone(report.trajectory_deviation)

        data = report.to_dict()
        self.assertEqual(list(data["endpoint_values"]), ["1"])
        self.assertEqual(data["integrator"]["method"], "rk45")

    def test_initial_parameters_fail(self):
        spec = load_problem(example_path("example1"))
        report = verify_solution(spec, TimeGrid(nodes=101, horizon=1.0), [1.0, 1.0])
        self.assertFalse(report.passed)
        self.assertGreater(report.max_endpoint_error, 1e-2)
        with self.assertRaises(VerificationError):
            report.raise_for_status()

    def test_trajectory_deviation(self):
        spec = load_problem(example_path("example1"))
        grid = TimeGrid(nodes=101, horizon=1.0)
        exact = integrate_closed_loop(spec, grid, EXAMPLE1_C)
        report = verify_solution(spec, grid, EXAMPLE1_C, solver_state=exact)
        self.assertAlmostEqual(report.trajectory_deviation, 0.0, delta=1e-12)
        with self.assertRaises(DimensionError):
            verify_solution(spec, grid, EXAMPLE1_C, solver_state=np.zeros((5, 3)))

    def test_rk4_reports_step(self):
        spec = load_problem(example_path("example1"))
        report = verify_solution(spec, TimeGrid(nodes=101, horizon=1.0), EXAMPLE1_C, config=VerifyConfig(method="rk4"))
        self.assertEqual(report.integrator["h"], 1e-4)


if __name__ == "__main__":
    unittest.main()
