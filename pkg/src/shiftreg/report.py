"""Human-readable summary of a result bundle."""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .errors import ArtifactError

REQUIRED = ("manifest.json", "summary.json", "config.resolved.json", "provenance.json")


@dataclass
class Check:
    """One acceptance criterion evaluated on a bundle."""
    name: str
    value: Optional[float]
    expected: str
    passed: bool


def load_bundle(directory: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Manifest and summary of a bundle; every listed artifact must be present."""
    directory = Path(directory)
    missing = [name for name in REQUIRED if not (directory / name).is_file()]
    if missing:
        raise ArtifactError(str(directory), missing)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    missing = [name for name in manifest.get("artifacts", []) if not (directory / name).is_file()]
    if missing:
        raise ArtifactError(str(directory), missing)
    summary = json.loads((directory / "summary.json").read_text(encoding="utf-8"))
    return manifest, summary


def _num(value: Optional[float], digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.{digits}f}"


def _within(value: Optional[float], target: float, tolerance: float) -> bool:
    return value is not None and abs(value - target) <= tolerance


def _check(name: str, value: Optional[float], expected: str, passed: bool) -> Check:
    return Check(name, value, expected, bool(passed))


def _trap(results: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    lines = [f"  {key:<28} {_num(value, 4)}" for key, value in sorted(results.items())]
    checks = [
        _check("central trap power (mW)", results.get("central_power_mw"), "5.7 ± 5%",
               _within(results.get("central_power_mw"), 5.7, 0.05 * 5.7)),
        _check("trap depth (uK)", results.get("depth_uk"), "-430 ± 5%",
               _within(results.get("depth_uk"), -430.0, 0.05 * 430.0)),
        _check("radial frequency (kHz)", results.get("radial_frequency_khz"), "17 ± 5%",
               _within(results.get("radial_frequency_khz"), 17.0, 0.05 * 17.0)),
        _check("axial frequency (Hz)", results.get("axial_frequency_hz"), "820 ± 5%",
               _within(results.get("axial_frequency_hz"), 820.0, 0.05 * 820.0)),
        _check("22 urad pointing noise (nm)", results.get("tilt_noise_displacement_nm"), "<= 10",
               (results.get("tilt_noise_displacement_nm") or math.inf) <= 10.0),
    ]
    return lines, checks


def _transport_scan(results: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    scan = results.get("scan", [])
    lines = [f"  {'duration ms':>11} {'retention':>16} {'T (uK)':>16} {'heating (uK)':>12}"]
    for row in scan:
        lines.append(
            f"  {_num(row['duration_ms'], 2):>11} "
            f"{_num(row['retention'], 4):>8} ± {_num(row['retention_error'], 4):<5} "
            f"{_num(row['temperature_uk'], 2):>8} ± {_num(row['temperature_error_uk'], 2):<5} "
            f"{_num(row['heating_uk'], 2):>12}"
        )
    if "baseline_heating_uk" in results:
        lines.append(f"  fixed trap baseline heating: {_num(results['baseline_heating_uk'], 2)} uK")

    by_duration = {round(row["duration_ms"], 6): row for row in scan}
    checks = []
    reference = by_duration.get(2.0)
    if reference is not None:
        checks.append(_check("2 ms retention", reference["retention"], "> 0.99",
                             reference["retention"] > 0.99))
        checks.append(_check("2 ms heating (uK)", reference["heating_uk"], "< 1.5",
                             reference["heating_uk"] < 1.5))
    heating = [row["heating_uk"] for row in sorted(scan, key=lambda r: r["duration_ms"])]
    if len(heating) >= 2:
        monotone = all(a >= b - 0.5 for a, b in zip(heating, heating[1:]))
        checks.append(_check("heating decreases with duration", None, "monotone", monotone))
    fast = by_duration.get(0.5)
    if fast is not None and reference is not None:
        excess = fast["heating_uk"] - reference["heating_uk"]
        checks.append(_check("0.5 ms excess heating (uK)", excess, "> 5", excess > 5.0))
    return lines, checks


def _handover(results: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    lines = []
    if "focal_shift_half_um" in results:
        lines.append(f"  calibrated focal shift at half pitch: {_num(results['focal_shift_half_um'], 4)} um")
    checks = []
    for case in results.get("handovers", []):
        label = f"{case['mode']} {case['direction']}"
        lines.append(f"  {label:<22} retention {_num(case['retention'], 4)} ± {_num(case['retention_error'], 4)}")
        if case["mode"] == "asymmetric" and case["direction"] == "A1->A2":
            checks.append(_check(f"{label} retention", case["retention"], "0.80 ± 0.03",
                                 _within(case["retention"], 0.80, 0.03)))
        else:
            checks.append(_check(f"{label} retention", case["retention"], "> 0.99",
                                 case["retention"] > 0.99))
    return lines, checks


def _register(results: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    lines = [
        f"  cycles                {results.get('cycles')}",
        f"  retention             {_num(results.get('retention'), 4)} ± {_num(results.get('retention_error'), 4)}",
        f"  displacement (um)     {_num(results.get('displacement_um'), 2)}"
        f" (expected {_num(results.get('expected_displacement_um'), 2)})",
        f"  heating (uK)          {_num(results.get('heating_uk'), 2)} ± {_num(results.get('temperature_error_uk'), 2)}",
    ]
    displacement = results.get("displacement_um")
    expected = results.get("expected_displacement_um")
    checks = [
        _check("centroid displacement (um)", displacement, f"{_num(expected, 1)} ± 0.5",
               expected is not None and _within(displacement, expected, 0.5)),
        _check("total heating (uK)", results.get("heating_uk"), "< 2",
               (results.get("heating_uk") if results.get("heating_uk") is not None else math.inf) < 2.0),
    ]
    return lines, checks


def _echo(results: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    fits = results.get("fits", {})
    ratios = results.get("ratios", {})
    lines = [f"  heating rate: {_num(results.get('heating_rate_uk_per_s'), 3)} uK/s"
             f"{' (calibrated)' if results.get('heating_calibrated') else ''}",
             f"  {'protocol':<20} {'T2 (ms)':>16} {'C(0)':>8} {'R^2':>7}"]
    checks = []
    for name in sorted(fits):
        fit = fits[name]
        lines.append(f"  {name:<20} {_num(fit['t2_ms'], 2):>8} ± {_num(fit['t2_error_ms'], 2):<5} "
                     f"{_num(fit['c0'], 3):>8} {_num(fit['r_squared'], 4):>7}")
        checks.append(_check(f"{name} fit R^2", fit["r_squared"], "> 0.98",
                             (fit["r_squared"] or 0.0) > 0.98))
    if results.get("heating_calibrated") and "rest" in fits:
        checks.append(_check("rest T2 (ms)", fits["rest"]["t2_ms"], "74 ± 2",
                             _within(fits["rest"]["t2_ms"], 74.0, 2.0)))
    for name in sorted(ratios):
        ratio = ratios[name]
        lines.append(f"  ratio {name}/rest: {_num(ratio['ratio'], 3)} ± {_num(ratio['error'], 3)}")
        checks.append(_check(f"{name}/rest T2 ratio", ratio["ratio"], "1.00 ± 0.05",
                             _within(ratio["ratio"], 1.0, 0.05)))
    return lines, checks


def _ramsey(results: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    lines = [
        f"  Ramsey 1/e time (ms)       {_num(results.get('ramsey_1e_ms'), 3)}",
        f"  thermal T2* estimate (ms)  {_num(results.get('thermal_t2_star_ms'), 3)}",
    ]
    decay = results.get("ramsey_1e_ms")
    checks = [_check("Ramsey 1/e time (ms)", decay, "2.5 .. 10",
                     decay is not None and 2.5 <= decay <= 10.0)]
    return lines, checks


SECTIONS = {
    "trap": _trap,
    "transport_scan": _transport_scan,
    "handover": _handover,
    "register": _register,
    "echo": _echo,
    "ramsey": _ramsey,
}


def evaluate(summary: Dict[str, Any]) -> Tuple[List[str], List[Check]]:
    section = SECTIONS.get(summary.get("kind", ""))
    if section is None:
        return [f"  no report section for kind {summary.get('kind')!r}"], []
    return section(summary.get("results", {}))


def build_report(directory: Union[str, Path]) -> Tuple[str, List[Check]]:
    """Summary text and acceptance checks; the text depends only on the bundle contents."""
    manifest, summary = load_bundle(directory)
    lines, checks = evaluate(summary)
    out = [
        f"shiftreg report: {summary.get('recipe')} ({summary.get('kind')})",
        f"seed {summary.get('seed')}, atoms {summary.get('atoms')}, "
        f"artifacts {len(manifest.get('artifacts', []))}",
        "",
        "Results",
        *lines,
    ]
    if checks:
        out += ["", "Acceptance"]
        for check in checks:
            flag = "PASS" if check.passed else "FAIL"
            value = "" if check.value is None else f" = {_num(check.value, 4)}"
            out.append(f"  [{flag}] {check.name}{value} (expected {check.expected})")
        passed = sum(c.passed for c in checks)
        out.append(f"  {passed}/{len(checks)} checks passed")
    return "\n".join(out) + "\n", checks
