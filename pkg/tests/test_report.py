"""Tests for bundle reports and acceptance checks."""

import pytest

from src.shiftreg.errors import ArtifactError
from src.shiftreg.experiments import ExperimentRunner
from src.shiftreg.report import REQUIRED, build_report, evaluate, load_bundle


@pytest.fixture
def trap_bundle(trap_config):
    return ExperimentRunner(trap_config, "trap").run().output_dir


def scan_row(duration_ms, retention, heating_uk):
    return {"duration_ms": duration_ms, "retention": retention, "retention_error": 0.001,
            "heating_uk": heating_uk, "temperature_uk": 15.0 + heating_uk,
            "temperature_error_uk": 0.1}


class TestLoadBundle:
    """Tests for bundle loading."""

    def test_empty_directory(self, temp_dir):
        with pytest.raises(ArtifactError) as info:
            load_bundle(temp_dir)
        assert info.value.missing == list(REQUIRED)
        assert info.value.exit_code == 2

    def test_missing_listed_artifact(self, trap_bundle):
        (trap_bundle / "trap_parameters.csv").unlink()
        with pytest.raises(ArtifactError, match="trap_parameters.csv") as info:
            load_bundle(trap_bundle)
        assert info.value.missing == ["trap_parameters.csv"]

    def test_manifest_and_summary(self, trap_bundle):
        manifest, summary = load_bundle(trap_bundle)
        assert manifest["recipe"] == "trap"
        assert summary["kind"] == "trap"


class TestBuildReport:
    """Tests for the rendered report."""

    def test_trap_checks_pass(self, trap_bundle):
        text, checks = build_report(trap_bundle)
        assert all(check.passed for check in checks)
        assert text.splitlines()[0] == "shiftreg report: trap (trap)"
        assert f"  {len(checks)}/{len(checks)} checks passed" in text

    def test_report_is_deterministic(self, trap_bundle, trap_config, temp_dir):
        trap_config.output_dir = temp_dir / "second"
        second = ExperimentRunner(trap_config, "trap").run().output_dir
        first_text, _ = build_report(trap_bundle)
        assert build_report(trap_bundle)[0] == first_text
        assert build_report(second)[0] == first_text


class TestEvaluate:
    """Tests for per-kind acceptance checks."""

    def test_unknown_kind(self):
        lines, checks = evaluate({"kind": "teleport", "results": {}})
        assert checks == []
        assert "teleport" in lines[0]

    def test_transport_scan(self):
        results = {"scan": [scan_row(0.5, 0.97, 8.0), scan_row(2.0, 0.995, 0.8)],
                   "baseline_heating_uk": 0.1}
        _, checks = evaluate({"kind": "transport_scan", "results": results})
        assert [c.name for c in checks] == [
            "2 ms retention", "2 ms heating (uK)", "heating decreases with duration",
            "0.5 ms excess heating (uK)",
        ]
        assert all(c.passed for c in checks)

    def test_transport_scan_heating_fails(self):
        results = {"scan": [scan_row(2.0, 0.995, 3.0)]}
        _, checks = evaluate({"kind": "transport_scan", "results": results})
        assert [c.passed for c in checks] == [True, False]

    def test_handover_targets(self):
        results = {"handovers": [
            {"direction": "A1->A2", "mode": "asymmetric", "retention": 0.81, "retention_error": 0.01},
            {"direction": "A2->A1", "mode": "asymmetric", "retention": 0.999, "retention_error": 0.001},
            {"direction": "A1->A2", "mode": "symmetric", "retention": 0.95, "retention_error": 0.01},
        ]}
        _, checks = evaluate({"kind": "handover", "results": results})
        assert [c.passed for c in checks] == [True, True, False]

    def test_register_displacement(self):
        results = {"cycles": 3, "retention": 1.0, "retention_error": 0.0, "displacement_um": 164.8,
                   "expected_displacement_um": 165.0, "heating_uk": 0.4, "temperature_error_uk": 0.2}
        _, checks = evaluate({"kind": "register", "results": results})
        assert all(c.passed for c in checks)

    def test_echo_ratio(self):
        fit = {"c0": 0.95, "c0_error": 0.01, "t2_error_ms": 1.0, "r_squared": 0.995}
        results = {
            "heating_calibrated": True,
            "heating_rate_uk_per_s": 12.0,
            "fits": {"rest": {**fit, "t2_ms": 74.5}, "transport_2ms": {**fit, "t2_ms": 60.0}},
            "ratios": {"transport_2ms": {"ratio": 60.0 / 74.5, "error": 0.02}},
        }
        lines, checks = evaluate({"kind": "echo", "results": results})
        outcome = {c.name: c.passed for c in checks}
        assert outcome["rest T2 (ms)"]
        assert outcome["rest fit R^2"]
        assert not outcome["transport_2ms/rest T2 ratio"]
        assert "(calibrated)" in lines[0]

    def test_ramsey_without_decay(self):
        _, checks = evaluate({"kind": "ramsey", "results": {"ramsey_1e_ms": None}})
        assert not checks[0].passed
