import json
import unittest

import numpy as np

from slidesolve.errors import *
from slidesolve.problem import load_problem, problem_from_dict, surface_eval, ControlKind
from slidesolve.problems import example_path
from slidesolve.grid import TimeGrid, build_state
from slidesolve.functionals import FunctionalBreakdown, eval_I
from slidesolve.gradients import *


def example_dict(name: str) -> dict:
    with open(example_path(name), "rt") as f:
        return json.load(f)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


class TestQuadraticOracle(unittest.TestCase):
    def test_fd_of_half_square(self):
        grid = TimeGrid(nodes=11, horizon=1.0)

        def evaluate(z, p):
            total = 0.5 * float(grid.weights @ (z ** 2).sum(axis=1)) + 0.5 * float(p @ p)
            return FunctionalBreakdown(phi=total, chi=0.0, omega=0.0, total=total)

        handle = FunctionalHandle(name="square", grid=grid, evaluate=evaluate)
        z = np.random.default_rng(0).normal(size=(11, 2))
        p = np.array([0.5, -2.0])
        fd = fd_gradient(handle, grid, z, p, step=1e-4)
        np.testing.assert_allclose(fd.g_z, z, atol=1e-8)
        np.testing.assert_allclose(fd.g_p, p, atol=1e-8)
        with self.assertRaises(ControlKindError):
            handle.gradient(z, p)

    def test_step_must_be_positive(self):
        grid = TimeGrid(nodes=3, horizon=1.0)
        handle = functional_for(load_problem(example_path("example1")), grid)
        with self.assertRaises(ValueError):
            fd_gradient(handle, grid, np.zeros((3, 3)), [1.0, 1.0], step=0.0)


class TestGradI(unittest.TestCase):
    def setUp(self):
        self.spec = load_problem(example_path("example1"))
        self.grid = TimeGrid(nodes=41, horizon=1.0)
        self.handle = functional_for(self.spec, self.grid)

    def test_handle_kind(self):
        self.assertEqual(self.handle.name, "I")

    def test_initial_point_matches_fd(self):
        z = np.zeros((41, 3))
        p = np.array([1.0, 1.0])
        analytic = grad_I(self.spec, self.grid, z, p)
        numeric = fd_gradient(self.handle, self.grid, z, p, step=1e-5)
        self.assertLessEqual(rel_error(analytic.g_z, numeric.g_z), 1e-6)

    def test_random_points_match_fd(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 20:
            # smooth z with large derivative so the controlled residual is active and x stays away from zero
            t = self.grid.times[:, None]
            z = rng.normal(scale=20.0, size=(1, 3)) + rng.normal(scale=5.0, size=(1, 3)) * np.sin(3 * t)
            p = rng.normal(size=2) + np.array([1.0, 1.0])
            x = build_state(self.grid, z, self.spec.x0).values
            if np.min(np.abs(x)) < 1e-2:
                continue
            analytic = grad_I(self.spec, self.grid, z, p)
            numeric = fd_gradient(self.handle, self.grid, z, p, step=1e-5)
            self.assertLessEqual(rel_error(analytic.g_z, numeric.g_z), 1e-6)
            self.assertLessEqual(rel_error(analytic.g_p, numeric.g_p), 1e-8)
            checked += 1

    def test_zero_at_exact_solution(self):
        data = example_dict("example1")
        data.update(x0=[0, 0, 0], endpoint={"1": 0})
        data["surface"]["rows"][0]["offset"] = 0.0
        data["surface"]["params"] = [1.0]
        spec = problem_from_dict(data)
        bundle = grad_I(spec, self.grid, np.zeros((41, 3)), [1.0])
        self.assertEqual(bundle.norm, 0.0)

    def test_norm(self):
        bundle = grad_I(self.spec, self.grid, np.zeros((41, 3)), [1.0, 2.0])
        expected = np.sqrt(bundle.z_norm_sq(self.grid) + bundle.p_norm_sq())
        self.assertAlmostEqual(bundle.norm, expected, places=12)

    def test_descent_direction(self):
        z = np.random.default_rng(3).normal(size=(41, 3))
        p = np.array([0.5, 1.5])
        bundle = grad_I(self.spec, self.grid, z, p)
        base = eval_I(self.spec, self.grid, z, p).total
        step = 1.0
        while step > 1e-12:
            if eval_I(self.spec, self.grid, z - step * bundle.g_z, p - step * bundle.g_p).total < base:
                break
            step /= 2
        self.assertGreater(step, 1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            grad_I(self.spec, self.grid, np.zeros((40, 3)), [1.0, 1.0])


class TestGradI12(unittest.TestCase):
    def setUp(self):
        self.spec = load_problem(example_path("example2"))
        self.grid = TimeGrid(nodes=41, horizon=0.2)
        self.handle = functional_for(self.spec, self.grid)
        self.p = np.array([0.18, 0.2, 0.12, 0.51])

    def test_handle_kind(self):
        self.assertEqual(self.handle.name, "I12")

    def test_initial_point_matches_fd(self):
        z = np.zeros((41, 3))
        analytic = self.handle.gradient(z, self.p)
        numeric = fd_gradient(self.handle, self.grid, z, self.p, step=1e-4)
        self.assertLessEqual(rel_error(analytic.g_z, numeric.g_z), 1e-6)
        self.assertLessEqual(rel_error(analytic.g_p, numeric.g_p), 1e-6)
        errors = compare_bundles(analytic, numeric)
        self.assertLessEqual(errors["rel_z"], 1e-6)

    def check_random_points(self, spec, seed: int) -> None:
        """ 20 smooth points: every x_j away from zero and, for u2, every s_i away from the branch switch. """
        handle = functional_for(spec, self.grid)
        rng = np.random.default_rng(seed)
        t = self.grid.times[:, None]
        checked = 0
        while checked < 20:
            z = rng.normal(scale=3.0, size=(1, 3)) + rng.normal(size=(1, 3)) * np.cos(5 * t)
            p = self.p + rng.normal(scale=0.05, size=4)
            x = build_state(self.grid, z, spec.x0).values
            if np.min(np.abs(x)) < 1e-2:
                continue
            if spec.control_kind is ControlKind.u2:
                s = surface_eval(spec.surface, x, p)
                if np.min(np.abs(np.abs(s) - spec.u2_delta)) < 1e-2:
                    continue
            analytic = handle.gradient(z, p)
            numeric = fd_gradient(handle, self.grid, z, p)
            self.assertLessEqual(rel_error(analytic.g_z, numeric.g_z), 1e-6)
            self.assertLessEqual(rel_error(analytic.g_p, numeric.g_p), 1e-8)
            checked += 1

    def test_u1_random_points_match_fd(self):
        self.check_random_points(self.spec, seed=7)

    def test_u2_random_points_match_fd(self):
        data = example_dict("example2")
        data.update(control_kind="u2", u2_k=2.0, u2_delta=0.05)
        spec = problem_from_dict(data)
        self.assertEqual(functional_for(spec, self.grid).name, "I12")
        self.check_random_points(spec, seed=21)

    def test_relay_problem_rejected(self):
        spec = load_problem(example_path("example1"))
        with self.assertRaises(ControlKindError):
            grad_I12(spec, self.grid, np.zeros((41, 3)), [1.0, 1.0])


if __name__ == "__main__":
    unittest.main()
