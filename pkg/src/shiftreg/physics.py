"""Physical constants, atomic species data and closed-form dipole-trap relations.

Everything is SI internally; angular frequencies are rad/s.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

from scipy import constants as csts

from .errors import ConfigError, PhysicsError


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants used throughout the simulator."""
    boltzmann_constant: float = csts.k
    reduced_planck: float = csts.hbar
    speed_of_light: float = csts.c
    atomic_mass_unit: float = csts.atomic_mass


CONSTANTS = PhysicalConstants()
KB = CONSTANTS.boltzmann_constant
HBAR = CONSTANTS.reduced_planck
C_LIGHT = CONSTANTS.speed_of_light


@dataclass(frozen=True)
class AtomSpecies:
    """Alkali atom reduced to two fine-structure lines and one hyperfine qubit pair."""
    name: str
    mass: float                  # kg
    d1_wavelength: float         # m
    d2_wavelength: float         # m
    natural_linewidth: float     # rad/s (D2)
    hyperfine_splitting: float   # rad/s (ground state)

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise PhysicsError(f"{self.name}: mass must be positive")
        if self.d1_wavelength <= self.d2_wavelength:
            raise PhysicsError(f"{self.name}: D1 wavelength must exceed D2 wavelength")
        if self.hyperfine_splitting <= 0:
            raise PhysicsError(f"{self.name}: hyperfine splitting must be positive")
        if self.natural_linewidth <= 0:
            raise PhysicsError(f"{self.name}: natural linewidth must be positive")

    @property
    def d1_angular_frequency(self) -> float:
        return 2 * math.pi * C_LIGHT / self.d1_wavelength

    @property
    def d2_angular_frequency(self) -> float:
        return 2 * math.pi * C_LIGHT / self.d2_wavelength


RB85 = AtomSpecies(
    name="Rb85",
    mass=84.911789738 * CONSTANTS.atomic_mass_unit,
    d1_wavelength=794.978851e-9,
    d2_wavelength=780.241368e-9,
    natural_linewidth=2 * math.pi * 6.0666e6,
    hyperfine_splitting=2 * math.pi * 3.0357324390e9,
)

BUILTIN_SPECIES = {RB85.name: RB85}


def load_species(source: Union[str, Path]) -> AtomSpecies:
    """Return a built-in species by name or load one from a JSON key-value file.

    The file holds ``name``, ``mass_amu``, ``d1_wavelength_nm``, ``d2_wavelength_nm``,
    ``natural_linewidth_mhz`` (Γ/2π) and ``hyperfine_splitting_ghz`` (ω_HFS/2π).
    """
    if str(source) in BUILTIN_SPECIES:
        return BUILTIN_SPECIES[str(source)]

    path = Path(source)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read species file {path}: {e}", field="species") from e
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, field="species", line=e.lineno) from e

    required = ("name", "mass_amu", "d1_wavelength_nm", "d2_wavelength_nm",
                "natural_linewidth_mhz", "hyperfine_splitting_ghz")
    missing = [key for key in required if key not in data]
    if missing:
        raise ConfigError(f"species file missing keys: {', '.join(missing)}", field="species")
    unknown = sorted(set(data) - set(required))
    if unknown:
        raise ConfigError(f"unknown species keys: {', '.join(unknown)}", field="species")

    return AtomSpecies(
        name=str(data["name"]),
        mass=float(data["mass_amu"]) * CONSTANTS.atomic_mass_unit,
        d1_wavelength=float(data["d1_wavelength_nm"]) * 1e-9,
        d2_wavelength=float(data["d2_wavelength_nm"]) * 1e-9,
        natural_linewidth=2 * math.pi * float(data["natural_linewidth_mhz"]) * 1e6,
        hyperfine_splitting=2 * math.pi * float(data["hyperfine_splitting_ghz"]) * 1e9,
    )


@dataclass(frozen=True)
class ThermalState:
    """Temperature and number of a trapped sample."""
    temperature: float   # K
    atom_count: int

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise PhysicsError("temperature must be non-negative")
        if self.atom_count < 0:
            raise PhysicsError("atom_count must be non-negative")


def line_detunings(trap_wavelength: float, species: AtomSpecies) -> Tuple[float, float]:
    """Return (Δ1, Δ2) = ω_trap − ω_D1, ω_trap − ω_D2 in rad/s.

    Only red detuning from both lines is supported.
    """
    if trap_wavelength <= 0:
        raise PhysicsError("trap wavelength must be positive")
    omega = 2 * math.pi * C_LIGHT / trap_wavelength
    delta_1 = omega - species.d1_angular_frequency
    delta_2 = omega - species.d2_angular_frequency
    if delta_1 == 0 or delta_2 == 0:
        raise PhysicsError(
            f"trap wavelength {trap_wavelength * 1e9:.3f} nm is resonant with a "
            f"{species.name} line: dipole potential is singular"
        )
    if delta_1 > 0 or delta_2 > 0:
        raise PhysicsError(
            f"unsupported regime: {trap_wavelength * 1e9:.3f} nm is not red-detuned "
            f"from both {species.name} lines"
        )
    return delta_1, delta_2


def effective_detuning(trap_wavelength: float, species: AtomSpecies) -> float:
    """Line-strength weighted detuning: 3/Δ_eff = 2/Δ2 + 1/Δ1 (negative for red detuning)."""
    delta_1, delta_2 = line_detunings(trap_wavelength, species)
    return 3.0 / (2.0 / delta_2 + 1.0 / delta_1)


def peak_intensity(power: float, waist: float) -> float:
    """Peak intensity 2P/(πw₀²) of a Gaussian focus."""
    return 2.0 * power / (math.pi * waist**2)


def rayleigh_range(waist: float, trap_wavelength: float) -> float:
    return math.pi * waist**2 / trap_wavelength


def dipole_potential_depth(power: float, waist: float, trap_wavelength: float,
                           species: AtomSpecies) -> float:
    """Peak dipole potential U₀ (J, negative) of a focused Gaussian beam.

    U₀ = (πc²Γ / 2ω₀³)·(2/Δ₂ + 1/Δ₁)·I_peak with ω₀ the D2 line.
    """
    if power < 0:
        raise PhysicsError("power must be non-negative")
    if waist <= 0:
        raise PhysicsError("waist must be positive")
    if power == 0:
        return 0.0
    delta_1, delta_2 = line_detunings(trap_wavelength, species)
    omega_0 = species.d2_angular_frequency
    prefactor = math.pi * C_LIGHT**2 * species.natural_linewidth / (2.0 * omega_0**3)
    return prefactor * (2.0 / delta_2 + 1.0 / delta_1) * peak_intensity(power, waist)


def trap_frequencies(depth: float, waist: float, trap_wavelength: float,
                     species: AtomSpecies) -> Tuple[float, float]:
    """Harmonic (radial, axial) angular frequencies at the bottom of a Gaussian focus."""
    if depth >= 0:
        raise PhysicsError("no bound states in repulsive/flat potential")
    if waist <= 0:
        raise PhysicsError("waist must be positive")
    z_r = rayleigh_range(waist, trap_wavelength)
    radial = math.sqrt(4.0 * abs(depth) / (species.mass * waist**2))
    axial = math.sqrt(2.0 * abs(depth) / (species.mass * z_r**2))
    return radial, axial


def photon_scattering_rate(depth: float, trap_wavelength: float, species: AtomSpecies) -> float:
    """Γ_sc ≈ (Γ/|Δ_eff|)·|U₀|/ħ."""
    if depth > 0:
        raise PhysicsError("scattering rate is defined for attractive potentials only")
    if depth == 0:
        return 0.0
    delta_eff = effective_detuning(trap_wavelength, species)
    return species.natural_linewidth / abs(delta_eff) * abs(depth) / HBAR


def differential_shift_factor(trap_wavelength: float, species: AtomSpecies) -> float:
    """η = ω_HFS/|Δ_eff|, the fractional differential light shift of the clock transition."""
    return species.hyperfine_splitting / abs(effective_detuning(trap_wavelength, species))


def depth_in_kelvin(depth: float) -> float:
    """Express an energy as a temperature (J → K)."""
    return depth / KB
