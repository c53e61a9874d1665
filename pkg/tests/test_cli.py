"""Tests for CLI system."""

import json
from pathlib import Path
from unittest.mock import Mock, patch

from click.testing import CliRunner

from src.shiftreg.cli import main
from src.shiftreg.report import Check


class TestCLIMain:
    """Tests for the command group."""

    def setup_method(self):
        """Set up test method."""
        self.runner = CliRunner()

    def test_cli_help(self):
        result = self.runner.invoke(main, ['--help'])

        assert result.exit_code == 0
        assert "shift register" in result.output
        for command in ("run", "validate", "report", "list-recipes", "calibrate"):
            assert command in result.output

    def test_cli_version(self):
        result = self.runner.invoke(main, ['--version'])

        assert result.exit_code == 0
        assert "0.1.0" in result.output

    def test_list_recipes(self):
        result = self.runner.invoke(main, ['list-recipes'])

        assert result.exit_code == 0
        names = [line.split()[0] for line in result.output.splitlines()]
        assert "trap" in names
        assert "transport_scan" in names
        assert "echo_transport" in names


class TestValidateCommand:
    """Tests for the validate command."""

    def setup_method(self):
        """Set up test method."""
        self.runner = CliRunner()

    def test_valid_recipe(self):
        result = self.runner.invoke(main, ['validate', '--config', 'trap'])

        assert result.exit_code == 0
        assert "✓ trap is valid (trap)" in result.output

    def test_cross_field_error(self, write_config, minimal_document):
        minimal_document["optics"] = {"array": {"lens_diameter_um": 130.0}}
        path = write_config(minimal_document)

        result = self.runner.invoke(main, ['validate', '-c', str(path)])

        assert result.exit_code == 2
        assert "lens diameter exceeds lens pitch" in result.output

    def test_schema_error(self, write_config):
        path = write_config({"schema_version": 1, "dynamics": {"atoms": 0}})

        result = self.runner.invoke(main, ['validate', '-c', str(path)])

        assert result.exit_code == 2
        assert "dynamics/atoms" in result.output

    def test_unknown_recipe(self):
        result = self.runner.invoke(main, ['validate', '-c', 'no_such_recipe'])

        assert result.exit_code == 2
        assert "no config file or recipe named" in result.output

    def test_missing_config_option(self):
        result = self.runner.invoke(main, ['validate'])

        assert result.exit_code != 0
        assert "Missing option" in result.output


class TestRunCommand:
    """Tests for the run command."""

    def setup_method(self):
        """Set up test method."""
        self.runner = CliRunner()

    def test_run_trap(self, temp_dir):
        out = temp_dir / "bundle"
        result = self.runner.invoke(main, [
            'run', '--config', 'trap', '--out', str(out), '--seed', '3', '--log-level', 'error',
        ])

        assert result.exit_code == 0
        assert "✓ Run completed successfully!" in result.output
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["seed"] == 3
        assert summary["recipe"] == "trap"

    def test_invalid_threads(self):
        result = self.runner.invoke(main, ['run', '-c', 'trap', '--threads', '0'])

        assert result.exit_code == 2

    @patch('src.shiftreg.cli.ExperimentRunner')
    def test_failed_run(self, mock_runner_class, temp_dir):
        mock_result = Mock()
        mock_result.success = False
        mock_result.errors = ["PhysicsError: atoms escaped"]
        mock_result.exit_code = 1
        mock_runner_class.return_value.run.return_value = mock_result

        result = self.runner.invoke(main, [
            'run', '-c', 'trap', '-o', str(temp_dir / 'out'), '--log-level', 'error',
        ])

        assert result.exit_code == 1
        assert "atoms escaped" in result.output
        mock_runner_class.assert_called_once()

    @patch('src.shiftreg.cli.ExperimentRunner')
    def test_interrupted_run(self, mock_runner_class, temp_dir):
        mock_runner_class.return_value.run.side_effect = KeyboardInterrupt

        result = self.runner.invoke(main, [
            'run', '-c', 'trap', '-o', str(temp_dir / 'out'), '--log-level', 'error',
        ])

        assert result.exit_code == 130
        assert "interrupted" in result.output

    def test_invalid_override(self, temp_dir):
        result = self.runner.invoke(main, [
            'run', '-c', 'trap', '-o', str(temp_dir / 'out'), '--seed', '-1', '--log-level', 'error',
        ])

        assert result.exit_code == 2
        assert "dynamics/seed" in result.output
        assert not (temp_dir / 'out').exists()


class TestReportCommand:
    """Tests for the report command."""

    def setup_method(self):
        """Set up test method."""
        self.runner = CliRunner()

    def test_report_bundle(self, temp_dir):
        out = temp_dir / "bundle"
        self.runner.invoke(main, ['run', '-c', 'trap', '-o', str(out), '--log-level', 'error'])

        result = self.runner.invoke(main, ['report', str(out), '--output', str(temp_dir / 'report.txt')])

        assert result.exit_code == 0
        assert "checks passed" in result.output
        assert (temp_dir / 'report.txt').read_text(encoding="utf-8") == result.output

    def test_missing_artifacts(self, temp_dir):
        result = self.runner.invoke(main, ['report', str(temp_dir)])

        assert result.exit_code == 2
        assert "missing artifacts" in result.output

    @patch('src.shiftreg.cli.build_report')
    def test_strict_fails_on_check(self, mock_build_report, temp_dir):
        mock_build_report.return_value = ("report\n", [Check("depth", -300.0, "-430", False)])

        lenient = self.runner.invoke(main, ['report', str(temp_dir)])
        strict = self.runner.invoke(main, ['report', str(temp_dir), '--strict'])

        assert lenient.exit_code == 0
        assert strict.exit_code == 1


class TestCalibrateCommand:
    """Tests for the calibrate command."""

    def setup_method(self):
        """Set up test method."""
        self.runner = CliRunner()

    @patch('src.shiftreg.cli.run_calibration')
    def test_calibrate_handover(self, mock_calibration, temp_dir):
        mock_calibration.return_value = {"parameter": "focal_shift_half_um", "value": 1.75}
        out = temp_dir / "cal.json"

        result = self.runner.invoke(main, [
            'calibrate', 'handover', '-c', 'handover', '-o', str(out), '--log-level', 'error',
        ])

        assert result.exit_code == 0
        assert "✓ focal_shift_half_um = 1.75" in result.output
        config, target, output = mock_calibration.call_args[0]
        assert target == "handover"
        assert output == Path(out)
        assert config.name == "handover"

    def test_unknown_target(self):
        result = self.runner.invoke(main, ['calibrate', 'mirror', '-c', 'trap'])

        assert result.exit_code == 2
        assert "Invalid value" in result.output
