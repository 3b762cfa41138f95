import pytest

from vlp_calib.services.errors import ModelDomainError
from vlp_calib.services.verification_service import SUITES, run_suite, verify_prop1, verify_theorem1


def test_suites():
    assert list(SUITES) == ["prop1", "prop2", "prop3", "theorem1"]


def test_theorem1_checks_pass():
    checks = verify_theorem1(seed=2024, geometries=200)
    failed = [c.name for c in checks if not c.passed]
    assert failed == []
    assert len(checks) == 9


def test_prop1_reports_three_checks():
    checks = verify_prop1(seed=2024, trials=2000)
    assert [c.name for c in checks] == ["covariance_relative_deviation", "bias_standard_errors", "sum_mse_ratio"]
    assert checks[2].measured == pytest.approx(1.0, abs=0.15)


def test_unknown_suite():
    with pytest.raises(ModelDomainError):
        run_suite("prop4", seed=1)
