"""Tests for gradcheck.py: the checker itself and the tiny soft-mode problem."""

import numpy as np
import pytest
from _support import leaf

from spiking_par import functional
from spiking_par.errors import ConfigError
from spiking_par.gradcheck import (
    TINY_CONFIG,
    Coordinate,
    GradCheckReport,
    check_parameters,
    finite_diff_check,
    relative_error,
    run_grad_check,
    tiny_problem,
)


class TestRelativeError:
    def test_symmetric_and_floored(self):
        assert relative_error(1.0, 1.1) == relative_error(1.1, 1.0)
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(0.0, 1e-10, floor=1e-6) < 1e-3


class TestFiniteDiffCheck:
    def test_five_point_stencil(self, rng):
        assert finite_diff_check(lambda t: (t.exp() * t).sum(), rng.normal(size=5), stencil=5) < 1e-8

    def test_unknown_stencil(self, rng):
        with pytest.raises(ConfigError):
            finite_diff_check(lambda t: t.sum(), rng.normal(size=3), stencil=4)

    def test_input_is_not_modified(self, rng):
        x = rng.normal(size=(3, 3))
        before = x.copy()
        finite_diff_check(lambda t: (t * t).sum(), x)
        np.testing.assert_array_equal(x, before)


class TestCheckParameters:
    def test_quadratic_passes_and_restores_values(self):
        w = leaf(np.array([[1.0, -2.0], [0.5, 3.0]]))
        b = leaf(np.array([0.25]))
        before = w.data.copy()
        report = check_parameters(lambda: (w * w).sum() + (b * w).sum(), {"w": w, "b": b}, samples=10)
        assert report.passed
        assert set(report.worst) == {"w", "b"}
        # every coordinate of a small tensor is checked
        assert report.checked == 5
        np.testing.assert_array_equal(w.data, before)

    def test_wrong_gradient_fails(self):
        w = leaf(np.array([1.0, 2.0]))
        other = leaf(np.array([3.0]))
        # "other" never reaches the loss through the tape, so its analytic gradient is zero
        report = check_parameters(lambda: (w * w).sum() + float(other.data[0]) ** 2, {"w": w, "other": other})
        assert not report.passed
        assert report.worst["other"].error > 0.5
        assert report.lines()[-1].startswith("FAIL")

    def test_zeroed_gradient_on_a_tiny_coordinate_fails(self):
        w = leaf(np.array([1.0, 2.0]))
        other = leaf(np.array([3.0]))
        # the true gradient of "other" is 1e-7, but the tape never sees it
        report = check_parameters(lambda: (w * w).sum() + 1e-7 * float(other.data[0]), {"w": w, "other": other})
        assert not report.passed
        worst = report.worst["other"]
        assert worst.analytic == 0.0
        assert worst.numeric == pytest.approx(1e-7, rel=1e-3)
        assert worst.abs_error > report.atol
        assert any(line.startswith("FAIL other") for line in report.lines())

    def test_round_off_sized_differences_pass_on_absolute_error(self):
        report = GradCheckReport(tolerance=1e-3)
        report.record("bias", Coordinate((0,), 0.0, 1e-12, relative_error(0.0, 1e-12)))
        assert report.worst["bias"].error == pytest.approx(0.5)
        assert report.passed
        assert "absolute 1e-09" in report.lines()[-1]

    def test_failures_outrank_larger_accepted_errors(self):
        report = GradCheckReport(tolerance=1e-3)
        report.record("w", Coordinate((0,), 0.0, 1e-12, 1.0))
        report.record("w", Coordinate((1,), 1.0, 1.01, relative_error(1.0, 1.01)))
        assert report.worst["w"].index == (1,)
        assert not report.passed

    def test_empty_report_does_not_pass(self):
        assert not GradCheckReport(tolerance=1e-3).passed


class TestTinyProblem:
    def test_parameters_are_float64(self):
        loss_fn, params = tiny_problem(seed=1)
        assert all(p.dtype == np.float64 for p in params.values())
        assert "projection.weight" in params
        assert loss_fn().dtype == np.float64

    def test_soft_mode(self):
        assert TINY_CONFIG.neuron_mode == "soft"

    def test_analytic_gradients_pass(self):
        report = run_grad_check(seed=0, samples=96)
        assert report.passed, "\n".join(report.lines())
        assert report.checked >= 60
        lines = report.lines()
        assert lines[0] == "=== Gradient check ==="
        assert lines[-1].startswith("PASS")

    def test_broken_conv_backward_is_caught(self, monkeypatch):
        original = functional.Conv2d.backward

        def doubled_weight_grad(self, grad):
            g_x, g_w = original(self, grad)
            return g_x, 2.0 * g_w

        monkeypatch.setattr(functional.Conv2d, "backward", doubled_weight_grad)
        report = run_grad_check(seed=0, samples=64)
        assert not report.passed
        assert report.worst["encoder.weight"].error > 0.1
        assert any(line.startswith("FAIL encoder.weight") for line in report.lines())
