"""Scenario orchestration, bundled recipes and result bundles."""

import csv
import json
import math
import os
import shutil
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .coherence import (
    DephasingModel,
    Protocol,
    calibrate_heating,
    echo_contrast_scan,
    protocol_history,
    ramsey_contrast_scan,
    ramsey_decay_time,
    thermal_dephasing_time,
    thermal_ramsey_envelope,
)
from .config import CoherenceConfig, ExperimentConfig, ExperimentKind
from .control import HandoverDirection, export_waveform, mirror_response, transport_only
from .dynamics import (
    ShiftRegisterSetup,
    build_trap_system,
    calibrate_handover,
    run_handover,
    run_register,
    run_transport_scan,
)
from .errors import ConfigError, ShiftRegisterError
from .imaging import render_register_images, write_grid, write_pgm
from .logger import create_logger
from .optics import TiltState, per_lens_power, project_to_cell
from .physics import (
    depth_in_kelvin,
    differential_shift_factor,
    dipole_potential_depth,
    photon_scattering_rate,
    rayleigh_range,
    trap_frequencies,
)

RECIPE_DIR = Path(__file__).parent / "recipes"
MANIFEST = "manifest.json"
PROVENANCE = "provenance.json"
SUMMARY = "summary.json"
RESOLVED_CONFIG = "config.resolved.json"


def list_recipes() -> List[Dict[str, str]]:
    """Bundled recipes with their experiment kind and description."""
    recipes = []
    for path in sorted(RECIPE_DIR.glob("*.json")):
        document = json.loads(path.read_text(encoding="utf-8"))
        recipes.append({
            "name": path.stem,
            "kind": document.get("experiment", {}).get("kind", ExperimentKind.TRAP.value),
            "description": document.get("description", ""),
        })
    return recipes


def resolve_config(source: Union[str, Path]) -> Tuple[ExperimentConfig, str]:
    """Load a config file, or a bundled recipe when ``source`` names one."""
    path = Path(source)
    if path.exists():
        return ExperimentConfig.from_file(path), path.stem
    candidate = RECIPE_DIR / f"{source}.json"
    if candidate.exists():
        return ExperimentConfig.from_file(candidate), str(source)
    known = ", ".join(r["name"] for r in list_recipes())
    raise ConfigError(f"no config file or recipe named {source!r} (recipes: {known})")


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Comma-separated table with a header row and round-trip exact floats."""
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if not math.isfinite(value) else value
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Path, document: Any) -> Path:
    path.write_text(json.dumps(_jsonable(document), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@dataclass
class RunResult:
    """Result of one experiment run."""
    success: bool
    output_dir: Optional[Path]
    output_files: List[Path]
    processing_time: float
    errors: List[str]
    warnings: List[str]
    statistics: Dict[str, Any]
    exit_code: int = 0


def dephasing_model(coherence: CoherenceConfig, setup: ShiftRegisterSetup,
                    heating_rate: float = 0.0) -> DephasingModel:
    """Dephasing parameters of the central A1 trap."""
    system = build_trap_system(setup)
    depth = float(system.a1.base_depth[setup.array.center_site])
    return DephasingModel.for_trap(setup.beam_a1.wavelength, depth, setup.species,
                                   heating_rate=heating_rate,
                                   detuning_jitter=2 * math.pi * coherence.detuning_jitter_hz)


def _ratio(a: float, a_err: float, b: float, b_err: float) -> Tuple[float, float]:
    ratio = a / b
    return ratio, abs(ratio) * math.hypot(a_err / a, b_err / b)


class ExperimentRunner:
    """Runs one configured scenario and writes its result bundle."""

    def __init__(self, config: ExperimentConfig, recipe: Optional[str] = None):
        self.config = config
        self.recipe = recipe or config.name
        self.logger = create_logger(level=config.logging.level, component="experiments")
        self._files: List[str] = []
        self._warnings: List[str] = []

        self.logger.info(
            "Runner initialized",
            recipe=self.recipe,
            kind=config.experiment.kind.value,
            seed=config.dynamics.seed,
            atoms=config.dynamics.atoms,
        )

    @property
    def output_dir(self) -> Path:
        return self.config.output_dir or Path("results") / self.config.name

    def run(self) -> RunResult:
        """Run the scenario; the bundle only appears once every artifact is written."""
        start_time = time.time()
        target = self.output_dir
        staging = target.parent / f".{target.name}.partial-{os.getpid()}"
        statistics: Dict[str, Any] = {}

        try:
            errors = self.config.validate()
            if errors:
                raise ConfigError("; ".join(errors))

            self.logger.run_event("started", self.recipe, outputDir=str(target))
            if staging.exists():
                shutil.rmtree(staging)
            staging.mkdir(parents=True)

            statistics = self._dispatch(staging)
            self._write(staging, RESOLVED_CONFIG, lambda p: write_json(p, self.config.to_dict()))
            self._write(staging, SUMMARY, lambda p: write_json(p, {
                "recipe": self.recipe,
                "kind": self.config.experiment.kind.value,
                "seed": self.config.dynamics.seed,
                "atoms": self.config.dynamics.atoms,
                "results": statistics,
            }))
            write_json(staging / PROVENANCE, {
                "tool": "shiftreg",
                "version": __version__,
                "recipe": self.recipe,
                "seed": self.config.dynamics.seed,
                "created": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            })
            write_json(staging / MANIFEST, {
                "recipe": self.recipe,
                "kind": self.config.experiment.kind.value,
                "artifacts": sorted(self._files + [PROVENANCE]),
            })

            if target.exists():
                shutil.rmtree(target)
            staging.rename(target)

            processing_time = time.time() - start_time
            files = [target / name for name in sorted(self._files + [PROVENANCE, MANIFEST])]
            self.logger.run_event("completed", self.recipe, processingTime=processing_time,
                                  outputFiles=len(files))
            return RunResult(True, target, files, processing_time, [], list(self._warnings), statistics)

        except ShiftRegisterError as e:
            return self._failure(staging, start_time, e, e.exit_code)
        except OSError as e:
            return self._failure(staging, start_time, e, 2)
        except Exception as e:
            return self._failure(staging, start_time, e, 1)

    def _failure(self, staging: Path, start_time: float, error: Exception, exit_code: int) -> RunResult:
        self.logger.error("Run failed", recipe=self.recipe, error=str(error), type=type(error).__name__)
        shutil.rmtree(staging, ignore_errors=True)
        return RunResult(False, None, [], time.time() - start_time,
                         [f"{type(error).__name__}: {error}"], list(self._warnings), {}, exit_code)

    def _write(self, directory: Path, name: str, writer) -> Path:
        path = directory / name
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
        self._files.append(name)
        self.logger.debug("Wrote artifact", outputFile=name)
        return path

    def _dispatch(self, bundle: Path) -> Dict[str, Any]:
        kind = self.config.experiment.kind
        handlers = {
            ExperimentKind.TRAP: self._run_trap,
            ExperimentKind.TRANSPORT_SCAN: self._run_transport_scan,
            ExperimentKind.HANDOVER: self._run_handover,
            ExperimentKind.REGISTER: self._run_register,
            ExperimentKind.ECHO: self._run_echo,
            ExperimentKind.RAMSEY: self._run_ramsey,
        }
        return handlers[kind](bundle)

    # Scenarios

    def _run_trap(self, bundle: Path) -> Dict[str, Any]:
        setup = self.config.setup()
        species, beam = setup.species, setup.beam_a1
        power = per_lens_power(beam, setup.array, setup.array.center_site)
        depth = dipole_potential_depth(power, setup.waist, beam.wavelength, species)
        radial, axial = trap_frequencies(depth, setup.waist, beam.wavelength, species)
        separation = project_to_cell(setup.array, setup.telescope, TiltState()).pitch
        noise = self.config.optics.tilt_noise_urad * 1e-6
        jitter = project_to_cell(setup.array, setup.telescope, TiltState(noise)).displacement
        eta = differential_shift_factor(beam.wavelength, species)
        scattering = photon_scattering_rate(depth, beam.wavelength, species)

        stats = {
            "central_power_mw": power * 1e3,
            "depth_uk": depth_in_kelvin(depth) * 1e6,
            "radial_frequency_khz": radial / (2 * math.pi) * 1e-3,
            "axial_frequency_hz": axial / (2 * math.pi),
            "rayleigh_range_um": rayleigh_range(setup.waist, beam.wavelength) * 1e6,
            "site_separation_um": separation * 1e6,
            "demagnification": setup.telescope.demagnification(setup.array),
            "tilt_noise_displacement_nm": jitter * 1e9,
            "scattering_rate_hz": scattering,
            "eta": eta,
            "thermal_t2_star_ms": thermal_dephasing_time(setup.temperature, eta) * 1e3,
        }
        units = {
            "central_power_mw": "mW", "depth_uk": "uK", "radial_frequency_khz": "kHz",
            "axial_frequency_hz": "Hz", "rayleigh_range_um": "um", "site_separation_um": "um",
            "demagnification": "", "tilt_noise_displacement_nm": "nm", "scattering_rate_hz": "1/s",
            "eta": "", "thermal_t2_star_ms": "ms",
        }
        self._write(bundle, "trap_parameters.csv", lambda p: write_table(
            p, ("quantity", "value", "unit"), [(k, v, units[k]) for k, v in stats.items()]))
        self.logger.info("Trap parameters computed", depthUK=stats["depth_uk"],
                         powerMW=stats["central_power_mw"])
        return stats

    def _run_transport_scan(self, bundle: Path) -> Dict[str, Any]:
        setup, exp = self.config.setup(), self.config.experiment
        durations = [d * 1e-3 for d in exp.durations_ms]
        scan = run_transport_scan(setup, durations, reps=exp.reps, ideal_mirror=exp.ideal_mirror,
                                  include_baseline=exp.include_baseline, logger=self.logger)

        rows = []
        for duration, result in zip(scan.durations, scan.results):
            rows.append((result.label, duration * 1e3) + self._observables(result))
        if scan.baseline is not None:
            rows.append((scan.baseline.label, max(exp.durations_ms)) + self._observables(scan.baseline))
        self._write(bundle, "transport_scan.csv", lambda p: write_table(p, (
            "label", "duration_ms", "retention", "retention_error", "temperature_uk",
            "temperature_error_uk", "heating_uk", "displacement_um"), rows))

        reference = min(durations, key=lambda d: abs(d - setup.sequence.transport_duration))
        self._write(bundle, "waveform.csv", lambda p: self._export_waveform(
            p, setup, transport_only(reference, setup.sequence, hold=setup.settle), exp.ideal_mirror))

        stats: Dict[str, Any] = {
            "scan": [{"duration_ms": d * 1e3, "retention": r.retention,
                      "retention_error": r.retention_error, "heating_uk": r.heating * 1e6,
                      "temperature_uk": r.final_temperature * 1e6,
                      "temperature_error_uk": r.temperature_error * 1e6}
                     for d, r in zip(scan.durations, scan.results)],
        }
        if scan.baseline is not None:
            stats["baseline_heating_uk"] = scan.baseline.heating * 1e6
        return stats

    @staticmethod
    def _observables(result) -> Tuple[float, ...]:
        return (result.retention, result.retention_error, result.final_temperature * 1e6,
                result.temperature_error * 1e6, result.heating * 1e6, result.displacement * 1e6)

    def _export_waveform(self, path: Path, setup: ShiftRegisterSetup, waveform, ideal: bool) -> Path:
        samples = waveform.sample(self.config.control.sample_rate_hz)
        if setup.mirror is not None and not ideal:
            samples.actual_tilt = mirror_response(setup.mirror, samples.times, samples.commanded_tilt)
        return export_waveform(samples, path)

    def _run_handover(self, bundle: Path) -> Dict[str, Any]:
        setup, exp = self.config.setup(), self.config.experiment
        stats: Dict[str, Any] = {}
        if exp.calibrate:
            calibration = calibrate_handover(setup, logger=self.logger)
            setup = replace(setup, degradation=replace(setup.degradation,
                                                       focal_shift_half=calibration.focal_shift_half))
            self._write(bundle, "handover_calibration.json", lambda p: write_json(p, {
                "focal_shift_half_um": calibration.focal_shift_half * 1e6,
                "retention": calibration.retention,
                "target": calibration.target,
                "history": [{"focal_shift_half_um": s * 1e6, "retention": r}
                            for s, r in calibration.history],
            }))
            stats["focal_shift_half_um"] = calibration.focal_shift_half * 1e6

        rows, cases = [], []
        for case in exp.handovers:
            direction = HandoverDirection(case.direction)
            mode = "symmetric" if case.symmetric else "asymmetric"
            result = run_handover(setup, direction, case.symmetric, logger=self.logger)
            rows.append((direction.value, mode, result.retention, result.retention_error,
                         result.statistics["raw_retention"], result.statistics["background_lost"],
                         result.final_temperature * 1e6, result.heating * 1e6))
            cases.append({"direction": direction.value, "mode": mode, "retention": result.retention,
                          "retention_error": result.retention_error})
        self._write(bundle, "handover.csv", lambda p: write_table(
            p, ("direction", "mode", "retention", "retention_error", "raw_retention", "background_lost",
                "temperature_uk", "heating_uk"), rows))
        stats["handovers"] = cases
        return stats

    def _run_register(self, bundle: Path) -> Dict[str, Any]:
        setup, exp = self.config.setup(), self.config.experiment
        register = run_register(setup, exp.cycles, logger=self.logger)
        images = render_register_images(
            register.movie, register.separation, register.checkpoint_times,
            pixels_per_site=exp.pixels_per_site, blur_sigma=exp.blur_um * 1e-6,
            physical_atoms=self.config.dynamics.physical_atoms or None, seed=setup.seed,
        )
        rows = []
        for k, (image, counts) in enumerate(zip(images, register.movie)):
            self._write(bundle, f"images/cycle_{k}.pgm", lambda p, im=image: write_pgm(im, p))
            self._write(bundle, f"grids/cycle_{k}.csv", lambda p, c=counts: write_grid(c, p))
            cx, cy = image.centroid()
            rows.append((k, image.time * 1e3, int(np.sum(counts)), cx * 1e6, cy * 1e6))
        self._write(bundle, "register_frames.csv", lambda p: write_table(
            p, ("cycle", "time_ms", "atoms", "centroid_x_um", "centroid_y_um"), rows))

        waveform_spec = replace(setup.sequence, cycle_count=exp.cycles, usable_rows=setup.usable_rows)
        result = register.result
        return {
            "cycles": exp.cycles,
            "retention": result.retention,
            "retention_error": result.retention_error,
            "displacement_um": result.displacement * 1e6,
            "expected_displacement_um": exp.cycles * register.separation * 1e6,
            "heating_uk": result.heating * 1e6,
            "temperature_error_uk": result.temperature_error * 1e6,
            "cycle_duration_ms": waveform_spec.cycle_duration * 1e3,
        }

    def _run_echo(self, bundle: Path) -> Dict[str, Any]:
        setup, coherence = self.config.setup(), self.config.coherence
        t_pi = [t * 1e-3 for t in coherence.t_pi_ms]
        pi_duration = coherence.pi_duration_us * 1e-6
        window = max(coherence.window_ms * 1e-3, pi_duration)
        model = dephasing_model(coherence, setup)

        protocols = [Protocol(p) for p in coherence.protocols]
        if Protocol.REST not in protocols:
            protocols.insert(0, Protocol.REST)
        runs = {p: protocol_history(setup, p, model, window=window, pi_duration=pi_duration,
                                    logger=self.logger) for p in protocols}

        stats: Dict[str, Any] = {}
        if coherence.heating_rate_uk_per_s is None:
            calibration = calibrate_heating(runs[Protocol.REST].history, model, t_pi,
                                            target=coherence.target_t2_ms * 1e-3,
                                            seed=setup.seed, logger=self.logger)
            model = replace(model, heating_rate=calibration.heating_rate)
            stats["heating_calibrated"] = True
        else:
            model = replace(model, heating_rate=coherence.heating_rate_uk_per_s * 1e-6)
            stats["heating_calibrated"] = False
        stats["heating_rate_uk_per_s"] = model.heating_rate * 1e6

        fits: Dict[str, Any] = {}
        for protocol, run in runs.items():
            curve = echo_contrast_scan(t_pi, run.history, model, protocol.value, seed=setup.seed,
                                       protocol_duration=run.duration, pi_duration=pi_duration)
            self._write(bundle, f"contrast_{protocol.value}.csv", lambda p, c=curve: write_table(
                p, ("two_t_pi_ms", "contrast", "sigma"),
                zip(c.abscissa * 1e3, c.contrast, c.sigma)))
            fits[protocol.value] = {
                "c0": curve.fit.c0, "c0_error": curve.fit.c0_error,
                "t2_ms": curve.fit.t2 * 1e3, "t2_error_ms": curve.fit.t2_error * 1e3,
                "r_squared": curve.fit.r_squared, "survivors": run.survivors, "atoms": run.atoms,
            }

        rest = fits[Protocol.REST.value]
        ratios = {}
        for name, fit in fits.items():
            if name == Protocol.REST.value:
                continue
            ratio, error = _ratio(fit["t2_ms"], fit["t2_error_ms"], rest["t2_ms"], rest["t2_error_ms"])
            ratios[name] = {"ratio": ratio, "error": error}
        self._write(bundle, "fit_report.json", lambda p: write_json(p, {"fits": fits, "ratios": ratios}))
        stats.update({"fits": fits, "ratios": ratios})
        return stats

    def _run_ramsey(self, bundle: Path) -> Dict[str, Any]:
        setup, coherence = self.config.setup(), self.config.coherence
        times = [t * 1e-3 for t in coherence.ramsey_times_ms]
        pi_duration = coherence.pi_duration_us * 1e-6
        window = max(coherence.window_ms * 1e-3, max(times) + pi_duration)
        model = dephasing_model(coherence, setup, (coherence.heating_rate_uk_per_s or 0.0) * 1e-6)

        run = protocol_history(setup, Protocol.REST, model, window=window, pi_duration=pi_duration,
                               logger=self.logger)
        curve = ramsey_contrast_scan(times, run.history, model, pi_duration)
        t2_star = thermal_dephasing_time(setup.temperature, model.eta)
        envelope = thermal_ramsey_envelope(curve.abscissa, t2_star)
        self._write(bundle, "ramsey.csv", lambda p: write_table(
            p, ("t_ms", "contrast", "sigma", "thermal_envelope"),
            zip(curve.abscissa * 1e3, curve.contrast, curve.sigma, np.atleast_1d(envelope))))

        try:
            decay = ramsey_decay_time(curve) * 1e3
        except ShiftRegisterError as e:
            self._warnings.append(str(e))
            decay = float("nan")
        return {
            "ramsey_1e_ms": decay,
            "thermal_t2_star_ms": t2_star * 1e3,
            "survivors": run.survivors,
            "eta": model.eta,
        }


def run_calibration(config: ExperimentConfig, target: str, output: Path) -> Dict[str, Any]:
    """Stand-alone calibration; writes a JSON report and returns it."""
    logger = create_logger(level=config.logging.level, component="calibration")
    setup = config.setup()
    if target == "handover":
        calibration = calibrate_handover(setup, logger=logger)
        report = {
            "parameter": "focal_shift_half_um",
            "value": calibration.focal_shift_half * 1e6,
            "retention": calibration.retention,
            "target": calibration.target,
            "history": [{"focal_shift_half_um": s * 1e6, "retention": r} for s, r in calibration.history],
        }
    elif target == "heating":
        coherence = config.coherence
        model = dephasing_model(coherence, setup)
        run = protocol_history(setup, Protocol.REST, model, window=coherence.window_ms * 1e-3,
                               pi_duration=coherence.pi_duration_us * 1e-6, logger=logger)
        calibration = calibrate_heating(run.history, model, [t * 1e-3 for t in coherence.t_pi_ms],
                                        target=coherence.target_t2_ms * 1e-3, seed=setup.seed,
                                        logger=logger)
        report = {
            "parameter": "heating_rate_uk_per_s",
            "value": calibration.heating_rate * 1e6,
            "t2_ms": calibration.t2 * 1e3,
            "target_ms": calibration.target * 1e3,
            "history": [{"heating_rate_uk_per_s": h * 1e6, "t2_ms": t * 1e3}
                        for h, t in calibration.history],
        }
    else:
        raise ConfigError(f"unknown calibration target {target!r}")

    report.update({"seed": config.dynamics.seed, "version": __version__})
    output.parent.mkdir(parents=True, exist_ok=True)
    write_json(output, report)
    logger.info("Calibration written", parameter=report["parameter"], value=report["value"],
                outputFile=str(output))
    return report
