import numpy as np
import pytest

from warpalign.diffcheck import (
    DifferentiableOp,
    FdReport,
    check_all,
    check_op,
    default_registry,
    finite_difference_gradient,
    format_reports,
    relative_error,
    scaled_backward,
)
from warpalign.errors import EvaluationError


@pytest.fixture(scope="module")
def registry():
    return default_registry()


def square_op():
    return DifferentiableOp(
        "square",
        forward=lambda inputs: (inputs[0] ** 2, None),
        backward=lambda inputs, state, cot: [2 * inputs[0] * cot],
        make_inputs=lambda rng: [rng.standard_normal(5)],
    )


class TestFiniteDifferences:
    def test_square(self):
        grad, kinks = finite_difference_gradient(lambda x: float(x[0] ** 2), [3.0])
        assert abs(grad[0] - 6.0) <= 1e-8
        assert not kinks.any()

    def test_abs_kink_flagged(self):
        _, kinks = finite_difference_gradient(lambda x: float(np.abs(x).sum()), [0.0, 1.0])
        np.testing.assert_array_equal(kinks, [True, False])

    def test_non_finite_raises(self):
        with pytest.raises(EvaluationError):
            finite_difference_gradient(lambda x: float("nan"), [1.0])

    def test_non_finite_neighbour_raises(self):
        with pytest.raises(EvaluationError, match="coordinate 0"), np.errstate(invalid="ignore"):
            finite_difference_gradient(lambda x: float(np.log(x[0])), [0.0 + 1e-6])

    def test_relative_error_metric(self):
        np.testing.assert_allclose(relative_error(np.array([0.5, 10.0]), np.array([0.4, 9.0])),
                                   [0.1, 0.1])


class TestCheckOp:
    def test_square_passes(self):
        report = check_op(square_op(), seed=0)
        assert report.passed and report.max_rel_error < 1e-8
        assert report.checked == 5 and report.excluded == 0

    def test_fault_injection_detected(self):
        report = check_op(scaled_backward(square_op(), 1.01), seed=0)
        assert not report.passed
        assert 1e-3 < report.max_rel_error < 2e-2

    def test_deterministic(self, registry):
        a = check_op(registry[4], seed=1)
        b = check_op(registry[4], seed=1)
        assert a == b

    def test_too_many_kinks_fail(self):
        report = FdReport("x", 0, 0.0, 0.0, (), 1e-5, excluded=1, checked=9)
        assert report.excluded_pct == 10.0
        assert not report.passed

    def test_line_format(self):
        line = FdReport("soft_dtw", 2, 0.0, 1.5e-9, (), 1e-5, 0, 10).line()
        assert line == "soft_dtw,2,1.500e-09,0.00,pass"


class TestRegistry:
    def test_covers_required_ops(self, registry):
        assert [op.name for op in registry] == [
            "mel_spectrogram", "interpolate", "positions_from_lengths", "predict_lengths",
            "soft_dtw", "l1_spectrogram_loss", "length_loss", "toy_decoder"]

    @pytest.mark.parametrize("index", range(8))
    def test_op_passes_seed_0(self, registry, index):
        report = check_op(registry[index], seed=0)
        assert report.passed, report.line()

    @pytest.mark.parametrize("index", range(8))
    def test_corrupted_op_fails(self, registry, index):
        report = check_op(scaled_backward(registry[index], 1.01), seed=0)
        assert not report.passed, report.line()

    def test_format(self):
        reports = check_all([square_op()], seeds=(0, 1))
        lines = format_reports(reports).splitlines()
        assert lines[0] == "name,seed,max_rel_err,excluded_pct,pass"
        assert [line.split(",")[:2] for line in lines[1:]] == [["square", "0"], ["square", "1"]]
