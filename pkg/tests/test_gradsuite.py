import numpy as np
import pytest

from capsulefusion import gradsuite
from capsulefusion import tensor as T
from capsulefusion.errors import GradCheckFailure
from capsulefusion.tensor.ops import ELEMENTWISE_KINDS


def sign_flipped_case(rng, v):
    x = T.Tensor(rng.standard_normal(4), requires_grad=True)

    def broken():
        return T.reduce_sum(T.record("neg", (x,), -x.data, lambda g: (g,)))

    return broken, {"x": x}


class TestCases:
    def test_every_elementwise_kind_has_a_case(self):
        assert set(ELEMENTWISE_KINDS) <= set(gradsuite.CASES)

    def test_spatial_and_loss_ops_covered(self):
        for op in ("conv2d", "max_pool", "avg_pool", "upsample2d", "softmax_cross_entropy",
                   "mean_squared_error", "batch_norm", "self_attention", "attention_fusion"):
            assert op in gradsuite.CASES

    @pytest.mark.parametrize("op", ["add", "div", "sigmoid", "log", "matmul", "softmax", "concat",
                                    "conv2d", "max_pool", "upsample2d", "softmax_cross_entropy"])
    def test_case_passes(self, op):
        result = gradsuite.run_case(op, gradsuite.CASES[op])
        assert result.passed, result
        assert result.max_relative_error < 1e-4


class TestSuite:
    def test_only_filter(self):
        results = gradsuite.run_suite(only=["mul", "reshape"], include_pipeline=False)
        assert [r.op for r in results] == ["mul", "reshape"]

    def test_format_lists_status(self):
        results = [gradsuite.CaseResult("add", 1e-9, True), gradsuite.CaseResult("neg", 2.0, False, "x")]
        text = gradsuite.format_results(results)
        assert "add" in text and "pass" in text
        assert "neg" in text and "FAIL" in text

    def test_check_results_names_failing_ops(self):
        results = [gradsuite.CaseResult("add", 1e-9, True), gradsuite.CaseResult("neg", 2.0, False, "x")]
        with pytest.raises(GradCheckFailure) as err:
            gradsuite.check_results(results)
        assert "neg" in str(err.value)
        assert err.value.details["ops"] == ["neg"]
        assert err.value.exit_code == 5

    def test_sign_flip_detected(self):
        result = gradsuite.run_case("neg", sign_flipped_case)
        assert not result.passed
        assert result.max_relative_error == pytest.approx(2.0)

    @pytest.mark.slow
    def test_full_suite_passes(self):
        results = gradsuite.run_suite()
        failing = [r.op for r in results if not r.passed]
        assert failing == []
        assert results[-1].op == "pipeline"
        assert all(np.isfinite(r.max_relative_error) for r in results)
