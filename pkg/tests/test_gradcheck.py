"""Tests for the per-component finite-difference verification suite."""

import pytest

from patrack.exceptions import VerificationException
from patrack.modules.pipeline.verification import check_mda, corrupt_gradients, run_gradcheck


class TestGradcheckSuite:
    def test_every_component_passes(self):
        results = run_gradcheck(samples=8, seed=0)
        assert [r.component for r in results] == ["MDA", "CEA", "HA", "head", "assembled"]
        for result in results:
            assert result.passed, result.to_dict()
            assert result.samples == 8

    def test_assembled_tolerance_is_looser(self):
        results = {r.component: r for r in run_gradcheck(samples=4, seed=1)}
        assert results["assembled"].tolerance == 1e-3
        assert results["MDA"].tolerance == 1e-4

    def test_corrupted_gradients_fail_everywhere(self):
        results = run_gradcheck(samples=8, seed=0, hook=corrupt_gradients)
        assert not any(r.passed for r in results)

    def test_failure_raises_with_exit_code(self):
        result = check_mda(samples=8, hook=corrupt_gradients)
        with pytest.raises(VerificationException) as exc:
            result.raise_for_failure()
        assert exc.value.exit_code == 6
        assert exc.value.details["component"] == "MDA"

    def test_same_seed_same_report(self):
        assert check_mda(samples=6, seed=2).to_dict() == check_mda(samples=6, seed=2).to_dict()
