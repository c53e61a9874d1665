"""Tests for atomic data and closed-form trap relations."""

import json
import math

import pytest

from src.shiftreg.errors import ConfigError, PhysicsError
from src.shiftreg.physics import (
    HBAR,
    KB,
    RB85,
    AtomSpecies,
    ThermalState,
    depth_in_kelvin,
    differential_shift_factor,
    dipole_potential_depth,
    effective_detuning,
    line_detunings,
    load_species,
    peak_intensity,
    photon_scattering_rate,
    rayleigh_range,
    trap_frequencies,
)


class TestSpecies:
    """Tests for species data and loading."""

    def test_builtin_lookup(self):
        assert load_species("Rb85") is RB85

    def test_load_from_file(self, temp_dir):
        path = temp_dir / "rb87.json"
        path.write_text(json.dumps({
            "name": "Rb87", "mass_amu": 86.909, "d1_wavelength_nm": 794.979,
            "d2_wavelength_nm": 780.241, "natural_linewidth_mhz": 6.0666,
            "hyperfine_splitting_ghz": 6.8347,
        }), encoding="utf-8")
        species = load_species(path)
        assert species.name == "Rb87"
        assert species.hyperfine_splitting == pytest.approx(2 * math.pi * 6.8347e9)

    def test_missing_keys_rejected(self, temp_dir):
        path = temp_dir / "bad.json"
        path.write_text(json.dumps({"name": "X"}), encoding="utf-8")
        with pytest.raises(ConfigError, match="missing keys"):
            load_species(path)

    def test_unknown_keys_rejected(self, temp_dir):
        path = temp_dir / "bad.json"
        path.write_text(json.dumps({
            "name": "X", "mass_amu": 1, "d1_wavelength_nm": 795, "d2_wavelength_nm": 780,
            "natural_linewidth_mhz": 6, "hyperfine_splitting_ghz": 3, "colour": "red",
        }), encoding="utf-8")
        with pytest.raises(ConfigError, match="colour"):
            load_species(path)

    def test_line_order_enforced(self):
        with pytest.raises(PhysicsError):
            AtomSpecies("X", 1e-25, 780e-9, 795e-9, 1e7, 1e10)

    def test_thermal_state_rejects_negative_temperature(self):
        with pytest.raises(PhysicsError):
            ThermalState(temperature=-1e-6, atom_count=10)


class TestDetunings:
    """Tests for detuning conventions."""

    def test_red_detuned_both_negative(self):
        d1, d2 = line_detunings(805e-9, RB85)
        assert d1 < 0 and d2 < 0
        assert abs(d2) > abs(d1)

    def test_resonance_is_singular(self):
        with pytest.raises(PhysicsError, match="singular"):
            line_detunings(RB85.d1_wavelength, RB85)

    def test_blue_detuning_unsupported(self):
        with pytest.raises(PhysicsError, match="unsupported"):
            line_detunings(770e-9, RB85)

    def test_effective_detuning_between_lines(self):
        d1, d2 = line_detunings(815e-9, RB85)
        delta = effective_detuning(815e-9, RB85)
        assert d2 < delta < d1


class TestTrapRelations:
    """Tests for depth, frequencies and scattering."""

    def test_central_trap_depth(self):
        depth = dipole_potential_depth(5.7e-3, 3.8e-6, 805e-9, RB85)
        assert depth_in_kelvin(depth) == pytest.approx(-430e-6, rel=0.05)

    def test_zero_power_gives_zero_depth(self):
        assert dipole_potential_depth(0.0, 3.8e-6, 805e-9, RB85) == 0.0

    def test_depth_linear_in_power(self):
        a = dipole_potential_depth(1e-3, 3.8e-6, 805e-9, RB85)
        b = dipole_potential_depth(3e-3, 3.8e-6, 805e-9, RB85)
        assert b == pytest.approx(3 * a)

    def test_invalid_waist(self):
        with pytest.raises(PhysicsError):
            dipole_potential_depth(1e-3, 0.0, 805e-9, RB85)

    def test_trap_frequencies(self):
        depth = dipole_potential_depth(5.7e-3, 3.8e-6, 805e-9, RB85)
        radial, axial = trap_frequencies(depth, 3.8e-6, 805e-9, RB85)
        assert radial / (2 * math.pi) == pytest.approx(17e3, rel=0.05)
        assert axial / (2 * math.pi) == pytest.approx(820.0, rel=0.05)

    def test_frequency_ratio_is_geometric(self):
        radial, axial = trap_frequencies(-1e-27, 3.8e-6, 805e-9, RB85)
        z_r = rayleigh_range(3.8e-6, 805e-9)
        assert radial / axial == pytest.approx(math.sqrt(2) * z_r / 3.8e-6)

    def test_no_bound_states(self):
        with pytest.raises(PhysicsError, match="no bound states"):
            trap_frequencies(0.0, 3.8e-6, 805e-9, RB85)

    def test_peak_intensity(self):
        assert peak_intensity(1.0, 1.0) == pytest.approx(2 / math.pi)

    def test_scattering_rate_scales_with_depth(self):
        shallow = photon_scattering_rate(-KB * 110e-6, 815e-9, RB85)
        deep = photon_scattering_rate(-KB * 220e-6, 815e-9, RB85)
        assert deep == pytest.approx(2 * shallow)
        assert 1.0 < shallow < 50.0

    def test_scattering_rate_repulsive_rejected(self):
        with pytest.raises(PhysicsError):
            photon_scattering_rate(1e-30, 815e-9, RB85)

    def test_differential_shift_factor_at_815(self):
        assert differential_shift_factor(815e-9, RB85) == pytest.approx(2.33e-4, rel=0.02)

    def test_differential_shift_of_thermal_atom(self):
        eta = differential_shift_factor(815e-9, RB85)
        shift = eta * KB * 110e-6 / HBAR
        assert 1e3 < shift < 1e4
