import json
import unittest

import numpy as np

from slidesolve.errors import *
from slidesolve.problem import load_problem, problem_from_dict
from slidesolve.problems import example_path
from slidesolve.grid import TimeGrid, build_state, quadrature
from slidesolve.inclusion import h_value
from slidesolve.functionals import *


def example_dict(name: str) -> dict:
    with open(example_path(name), "rt") as f:
        return json.load(f)


class TestExample1Functionals(unittest.TestCase):
    def setUp(self):
        self.spec = load_problem(example_path("example1"))
        self.grid = TimeGrid(nodes=2001, horizon=1.0)
        self.z = np.zeros((2001, 3))

    def test_initial_point_is_37(self):
        out = eval_I(self.spec, self.grid, self.z, [1.0, 1.0])
        self.assertAlmostEqual(out.total, 37.0, delta=1e-12)
        self.assertAlmostEqual(out.phi, 32.5, delta=1e-12)
        self.assertEqual(out.chi, 4.5)
        self.assertEqual(out.omega, 0.0)
        self.assertEqual(out.total, out.phi + out.chi + out.omega)

    def test_omega_off_surface(self):
        self.assertAlmostEqual(eval_omega(self.spec, self.grid, self.z, [1.0, 2.0]), 0.5, delta=1e-12)

    def test_chi_met_endpoint(self):
        z = np.zeros((2001, 3))
        z[:, 0] = 3.0
        self.assertAlmostEqual(eval_chi(self.spec, self.grid, z), 0.0, delta=1e-20)

    def test_phi_vanishes_on_the_field(self):
        data = example_dict("example1")
        data["x0"] = [0, 0, 0]
        spec = problem_from_dict(data)
        self.assertEqual(eval_phi(spec, self.grid, self.z), 0.0)

    def test_to_dict(self):
        out = eval_I(self.spec, self.grid, self.z, [1.0, 1.0]).to_dict()
        self.assertEqual(set(out), {"phi", "chi", "omega", "total"})

    def test_phi_matches_per_node_scan(self):
        grid = TimeGrid(nodes=31, horizon=1.0)
        z = np.random.default_rng(0).normal(scale=5.0, size=(31, 3))
        x = build_state(grid, z, self.spec.x0).values
        h2 = np.array([sum(h_value(self.spec, i, x[k], z[k, i]) ** 2 for i in range(3)) for k in range(31)])
        self.assertAlmostEqual(eval_phi(self.spec, grid, z), 0.5 * quadrature(grid, h2), delta=1e-10)

    def test_parts_nonnegative(self):
        rng = np.random.default_rng(1)
        grid = TimeGrid(nodes=21, horizon=1.0)
        for _ in range(20):
            out = eval_I(self.spec, grid, rng.normal(size=(21, 3)), rng.normal(size=2))
            self.assertGreaterEqual(min(out.phi, out.chi, out.omega), 0.0)

    def test_refinement(self):
        def total(nodes):
            grid = TimeGrid(nodes=nodes, horizon=1.0)
            z = np.stack([np.sin(grid.times), np.cos(grid.times), grid.times ** 2], axis=1)
            return eval_I(self.spec, grid, z, [1.0, 1.0]).total
        self.assertLess(abs(total(201) - total(401)), 1e-3)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            eval_I(self.spec, self.grid, np.zeros((2001, 2)), [1.0, 1.0])

    def test_parameter_mismatch(self):
        with self.assertRaises(ParameterLengthError):
            eval_omega(self.spec, self.grid, self.z, [1.0])

    def test_I12_needs_smooth_control(self):
        with self.assertRaises(ControlKindError):
            eval_I12(self.spec, self.grid, self.z, [1.0, 1.0])


class TestExample2Functionals(unittest.TestCase):
    def setUp(self):
        self.spec = load_problem(example_path("example2"))
        self.grid = TimeGrid(nodes=2001, horizon=0.2)
        self.z = np.zeros((2001, 3))
        self.p = [0.18, 0.2, 0.12, 0.51]

    def test_initial_point(self):
        out = eval_I12(self.spec, self.grid, self.z, self.p)
        self.assertLessEqual(abs(out.total - 1591.75905) / 1591.75905, 1e-4)
        self.assertIsNone(out.omega)
        self.assertAlmostEqual(out.chi, 11.6275, delta=1e-10)

    def test_constant_residuals(self):
        profile = residual_profile(self.spec, self.grid, self.z, self.p)
        np.testing.assert_allclose(profile.residual[0], [46.637, -115.889, -14.0], atol=1e-3)
        np.testing.assert_allclose(profile.residual[-1], profile.residual[0])
        np.testing.assert_allclose(profile.surface[0], [0.24, -0.91])

    def test_exact_closed_loop_is_zero(self):
        grid = TimeGrid(nodes=3, horizon=0.2)
        data = example_dict("example2")
        data.update(x0=[0, 0, 0], endpoint={})
        data["surface"]["rows"][0]["offset"] = 0.0
        data["surface"]["rows"][1]["offset"] = 0.0
        data["surface"]["params"] = [0.18, 0.2]
        spec = problem_from_dict(data)
        out = eval_I12(spec, grid, np.zeros((3, 3)), [0.18, 0.2])
        self.assertEqual(out.total, 0.0)


class TestKinkNodes(unittest.TestCase):
    def setUp(self):
        self.spec = load_problem(example_path("example1"))

    def test_none_at_initial_point(self):
        grid = TimeGrid(nodes=11, horizon=1.0)
        self.assertEqual(kink_nodes(self.spec, grid, np.zeros((11, 3))), [])

    def test_isolated_zero_crossing_node(self):
        # dt = 0.125 and x1 = -3 + 0.75 k vanishes exactly at k = 4 only
        grid = TimeGrid(nodes=9, horizon=1.0)
        z = np.zeros((9, 3))
        z[:, 0] = 6.0
        self.assertEqual(kink_nodes(self.spec, grid, z), [4])

    def test_vanishing_on_a_run(self):
        grid = TimeGrid(nodes=9, horizon=1.0)
        z = np.zeros((9, 3))
        # x1 reaches 0 at k = 4; alternating z keeps it there
        z[:, 0] = [6, 6, 6, 6, 6, -6, 6, -6, 6]
        self.assertEqual(kink_nodes(self.spec, grid, z), [4, 5, 6, 7, 8])

    def test_near_zero_run(self):
        grid = TimeGrid(nodes=9, horizon=1.0)
        z = np.zeros((9, 3))
        z[:, 0] = [6, 6, 6, 6, 6, -6, 6, -6, 6]
        spec = problem_from_dict({**example_dict("example1"), "x0": [-3 + 1e-12, 4, 6]})
        self.assertEqual(kink_nodes(spec, grid, z), [4, 5, 6, 7, 8])
        self.assertEqual(kink_nodes(spec, grid, z, atol=1e-15), [])


if __name__ == "__main__":
    unittest.main()
