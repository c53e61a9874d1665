"""Experiment configuration: JSON loading, schema validation and conversion to domain objects."""

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from jsonschema import Draft202012Validator

from .control import HandoverDirection, MirrorModel, RampShape, ShiftSequenceSpec
from .dynamics import IntegratorConfig, ShiftRegisterSetup
from .errors import ConfigError
from .logger import LogLevel
from .optics import DegradationModel, IlluminationBeam, MicrolensArray, RelayTelescope
from .physics import AtomSpecies, load_species

SCHEMA_VERSION = 1


class ExperimentKind(str, Enum):
    """Scenario a config runs."""
    TRAP = "trap"
    TRANSPORT_SCAN = "transport_scan"
    HANDOVER = "handover"
    REGISTER = "register"
    ECHO = "echo"
    RAMSEY = "ramsey"


@dataclass
class ArrayConfig:
    lens_pitch_um: float = 125.0
    lens_diameter_um: float = 100.0
    focal_length_mm: float = 1.0
    grid_extent: List[int] = field(default_factory=lambda: [50, 50])
    active_extent: Optional[List[int]] = field(default_factory=lambda: [15, 15])


@dataclass
class TelescopeConfig:
    lens1_focal_mm: float = 80.0
    lens2_focal_mm: float = 35.5
    numerical_aperture: float = 0.29
    measured_separation_um: Optional[float] = 55.0


@dataclass
class BeamConfig:
    power_mw: float = 275.0
    radius_um: float = 450.0
    wavelength_nm: float = 805.0
    transmission: float = 0.85


@dataclass
class DegradationConfig:
    depth_factor_half: float = 0.92
    waist_factor_half: float = 1.04
    focal_shift_half_um: float = 1.75


@dataclass
class OpticsConfig:
    array: ArrayConfig = field(default_factory=ArrayConfig)
    telescope: TelescopeConfig = field(default_factory=TelescopeConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    beam_a2: Optional[BeamConfig] = None
    waist_um: float = 3.8
    tilt_noise_urad: float = 22.0
    degradation: DegradationConfig = field(default_factory=DegradationConfig)


@dataclass
class SequenceConfig:
    transport_ms: float = 2.0
    handover_ms: float = 5.0
    return_ms: float = 5.0
    load_ms: float = 0.0
    cycle_count: int = 1
    ramp_shape: RampShape = RampShape.MINIMUM_JERK
    crossfade: RampShape = RampShape.LINEAR
    symmetric_handover: bool = False


@dataclass
class MirrorConfig:
    natural_frequency_khz: float = 11.0
    damping_ratio: float = 0.25
    ideal: bool = False


@dataclass
class ControlConfig:
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    mirror: MirrorConfig = field(default_factory=MirrorConfig)
    sample_rate_hz: float = 100e3


@dataclass
class IntegratorSettings:
    time_step_us: float = 1.0
    stencil: int = 9
    loss_energy_margin: float = 0.0
    capture_radius_um: Optional[float] = None
    record_interval: int = 10


@dataclass
class DynamicsConfig:
    atoms: int = 10_000
    physical_atoms: int = 200
    seed: int = 0
    temperature_uk: float = 15.0
    lifetime_s: Optional[float] = 0.5
    settle_ms: float = 2.0
    workers: int = 1
    register_block: List[int] = field(default_factory=lambda: [3, 3])
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)


@dataclass
class CoherenceConfig:
    heating_rate_uk_per_s: Optional[float] = None     # None: calibrate against target_t2_ms
    detuning_jitter_hz: float = 0.0
    pi_duration_us: float = 210.0
    target_t2_ms: float = 74.0
    protocols: List[str] = field(default_factory=lambda: ["rest", "transport_2ms"])
    t_pi_ms: List[float] = field(default_factory=lambda: [5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    ramsey_times_ms: List[float] = field(
        default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0]
    )
    window_ms: float = 20.0


@dataclass
class HandoverCase:
    direction: HandoverDirection = HandoverDirection.A1_TO_A2
    symmetric: bool = False


@dataclass
class ExperimentSection:
    kind: ExperimentKind = ExperimentKind.TRAP
    durations_ms: List[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 3.0, 5.0])
    reps: int = 1
    ideal_mirror: bool = False
    include_baseline: bool = True
    handovers: List[HandoverCase] = field(default_factory=lambda: [
        HandoverCase(HandoverDirection.A1_TO_A2, False),
        HandoverCase(HandoverDirection.A2_TO_A1, False),
        HandoverCase(HandoverDirection.A1_TO_A2, True),
        HandoverCase(HandoverDirection.A2_TO_A1, True),
    ])
    calibrate: bool = False
    cycles: int = 3
    blur_um: float = 1.5
    pixels_per_site: int = 4


@dataclass
class LoggingConfig:
    level: LogLevel = LogLevel.INFO


def _number(minimum: Optional[float] = None, exclusive: bool = False) -> Dict[str, Any]:
    schema: Dict[str, Any] = {"type": "number"}
    if minimum is not None:
        schema["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return schema


def _positive() -> Dict[str, Any]:
    return _number(0, exclusive=True)


def _object(properties: Dict[str, Any]) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": properties}


def _pair() -> Dict[str, Any]:
    return {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2}


_BEAM_SCHEMA = _object({
    "power_mw": _positive(),
    "radius_um": _positive(),
    "wavelength_nm": _positive(),
    "transmission": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
})
_RAMPS = [shape.value for shape in RampShape]

CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "shiftreg experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "species": {"type": "string", "minLength": 1},
        "output_dir": {"type": ["string", "null"]},
        "logging": _object({"level": {"enum": [level.value for level in LogLevel]}}),
        "optics": _object({
            "array": _object({
                "lens_pitch_um": _positive(),
                "lens_diameter_um": _positive(),
                "focal_length_mm": _positive(),
                "grid_extent": _pair(),
                "active_extent": {"oneOf": [_pair(), {"type": "null"}]},
            }),
            "telescope": _object({
                "lens1_focal_mm": _positive(),
                "lens2_focal_mm": _positive(),
                "numerical_aperture": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "measured_separation_um": {"oneOf": [_positive(), {"type": "null"}]},
            }),
            "beam": _BEAM_SCHEMA,
            "beam_a2": {"oneOf": [_BEAM_SCHEMA, {"type": "null"}]},
            "waist_um": _positive(),
            "tilt_noise_urad": _number(0),
            "degradation": _object({
                "depth_factor_half": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "waist_factor_half": _number(1),
                "focal_shift_half_um": _number(0),
            }),
        }),
        "control": _object({
            "sequence": _object({
                "transport_ms": _positive(),
                "handover_ms": _positive(),
                "return_ms": _positive(),
                "load_ms": _number(0),
                "cycle_count": {"type": "integer", "minimum": 0},
                "ramp_shape": {"enum": _RAMPS},
                "crossfade": {"enum": _RAMPS},
                "symmetric_handover": {"type": "boolean"},
            }),
            "mirror": _object({
                "natural_frequency_khz": _positive(),
                "damping_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "ideal": {"type": "boolean"},
            }),
            "sample_rate_hz": _positive(),
        }),
        "dynamics": _object({
            "atoms": {"type": "integer", "minimum": 1},
            "physical_atoms": {"type": "integer", "minimum": 0},
            "seed": {"type": "integer", "minimum": 0},
            "temperature_uk": _number(0),
            "lifetime_s": {"oneOf": [_positive(), {"type": "null"}]},
            "settle_ms": _number(0),
            "workers": {"type": "integer", "minimum": 1},
            "register_block": _pair(),
            "integrator": _object({
                "time_step_us": _positive(),
                "stencil": {"enum": [1, 9, 25]},
                "loss_energy_margin": _number(0),
                "capture_radius_um": {"oneOf": [_positive(), {"type": "null"}]},
                "record_interval": {"type": "integer", "minimum": 1},
            }),
        }),
        "coherence": _object({
            "heating_rate_uk_per_s": {"oneOf": [_number(0), {"type": "null"}]},
            "detuning_jitter_hz": _number(0),
            "pi_duration_us": _positive(),
            "target_t2_ms": _positive(),
            "protocols": {"type": "array", "minItems": 1, "items": {
                "enum": ["rest", "transport_2ms", "handover_roundtrip", "full_cycle"]}},
            "t_pi_ms": {"type": "array", "minItems": 4, "items": _positive()},
            "ramsey_times_ms": {"type": "array", "minItems": 2, "items": _number(0)},
            "window_ms": _positive(),
        }),
        "experiment": _object({
            "kind": {"enum": [kind.value for kind in ExperimentKind]},
            "durations_ms": {"type": "array", "minItems": 1, "items": _positive()},
            "reps": {"type": "integer", "minimum": 1},
            "ideal_mirror": {"type": "boolean"},
            "include_baseline": {"type": "boolean"},
            "handovers": {"type": "array", "minItems": 1, "items": _object({
                "direction": {"enum": [d.value for d in HandoverDirection]},
                "symmetric": {"type": "boolean"},
            })},
            "calibrate": {"type": "boolean"},
            "cycles": {"type": "integer", "minimum": 0},
            "blur_um": _number(0),
            "pixels_per_site": {"type": "integer", "minimum": 1},
        }),
    },
}


def _build(cls, data: Dict[str, Any]):
    """Instantiate a config dataclass from a schema-valid mapping."""
    instance = cls()
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        current = getattr(instance, f.name)
        if is_dataclass(current) and isinstance(value, dict):
            value = _build(type(current), value)
        elif f.name == "beam_a2" and isinstance(value, dict):
            value = _build(BeamConfig, value)
        elif f.name == "handovers":
            value = [_build(HandoverCase, item) for item in value]
        elif isinstance(current, Enum):
            value = type(current)(value)
        setattr(instance, f.name, value)
    return instance


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


@dataclass
class ExperimentConfig:
    """Top-level experiment configuration."""
    name: str = "unnamed"
    description: str = ""
    species: str = "Rb85"
    output_dir: Optional[Path] = None
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    coherence: CoherenceConfig = field(default_factory=CoherenceConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    source: Optional[Path] = None

    @staticmethod
    def schema_errors(document: Dict[str, Any]) -> List[str]:
        """Schema violations as '<json path>: <message>' strings."""
        validator = Draft202012Validator(CONFIG_SCHEMA)
        errors = []
        for error in sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path)):
            path = "/".join(str(p) for p in error.absolute_path) or "<root>"
            errors.append(f"{path}: {error.message}")
        return errors

    @classmethod
    def from_dict(cls, document: Dict[str, Any], source: Optional[Path] = None) -> "ExperimentConfig":
        errors = cls.schema_errors(document)
        if errors:
            first = errors[0]
            raise ConfigError(first.split(": ", 1)[1] + (f" (+{len(errors) - 1} more)" if len(errors) > 1 else ""),
                              field=first.split(": ", 1)[0])
        data = copy.deepcopy(document)
        data.pop("schema_version", None)
        config = _build(cls, data)
        if config.output_dir is not None:
            config.output_dir = Path(config.output_dir)
        if isinstance(config.logging.level, str):
            config.logging.level = LogLevel(config.logging.level)
        config.source = source
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Load and validate a JSON config file."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror or e}") from e
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{e.msg} (column {e.colno})", line=e.lineno) from e
        if not isinstance(document, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(document, source=path)

    @classmethod
    def from_cli_args(cls, config_path: Optional[Union[str, Path]] = None, **kwargs) -> "ExperimentConfig":
        """Load ``config_path`` (or defaults) and apply CLI overrides."""
        config = cls.from_file(config_path) if config_path else cls()
        return config.apply_overrides(**kwargs)

    def apply_overrides(self, **kwargs) -> "ExperimentConfig":
        """Apply CLI overrides in place; None values are ignored."""
        config = self
        if kwargs.get("seed") is not None:
            config.dynamics.seed = int(kwargs["seed"])
        if kwargs.get("threads") is not None:
            config.dynamics.workers = int(kwargs["threads"])
        if kwargs.get("output_dir") is not None:
            config.output_dir = Path(kwargs["output_dir"])
        if kwargs.get("log_level") is not None:
            config.logging.level = LogLevel(kwargs["log_level"])
        if kwargs.get("atoms") is not None:
            config.dynamics.atoms = int(kwargs["atoms"])

        return config

    def validate(self) -> List[str]:
        """Validate cross-field constraints and return any errors."""
        errors = self.schema_errors(self.to_dict())

        array = self.optics.array
        if array.lens_diameter_um > array.lens_pitch_um:
            errors.append("optics/array: lens diameter exceeds lens pitch")
        if array.active_extent and any(a > g for a, g in zip(array.active_extent, array.grid_extent)):
            errors.append("optics/array: active extent exceeds grid extent")
        if self.optics.telescope.lens1_focal_mm <= self.optics.telescope.lens2_focal_mm:
            errors.append("optics/telescope: lens1 must have the longer focal length")
        if self.dynamics.physical_atoms > self.dynamics.atoms:
            errors.append("dynamics: physical_atoms exceeds the simulated ensemble size")

        try:
            self.species_data()
        except Exception as e:
            errors.append(f"species: {e}")

        return errors

    def to_dict(self) -> Dict[str, Any]:
        """Resolved configuration as a schema-valid document."""
        data = {"schema_version": SCHEMA_VERSION}
        for f in fields(self):
            if f.name == "source":
                continue
            value = getattr(self, f.name)
            if is_dataclass(value):
                value = asdict(value)
            elif isinstance(value, Path):
                value = str(value)
            data[f.name] = _plain(value)
        return data

    def species_data(self) -> AtomSpecies:
        source = self.species
        if self.source is not None and not Path(source).is_absolute() and source.endswith(".json"):
            source = str(self.source.parent / source)
        return load_species(source)

    def sequence_spec(self) -> ShiftSequenceSpec:
        seq = self.control.sequence
        return ShiftSequenceSpec(
            transport_duration=seq.transport_ms * 1e-3,
            handover_duration=seq.handover_ms * 1e-3,
            return_duration=seq.return_ms * 1e-3,
            cycle_count=seq.cycle_count,
            ramp_shape=RampShape(seq.ramp_shape),
            symmetric_handover=seq.symmetric_handover,
            load_duration=seq.load_ms * 1e-3,
            crossfade=RampShape(seq.crossfade),
            pitch_tilt=self.optics.array.lens_pitch_um / (self.optics.array.focal_length_mm * 1e3),
            usable_rows=self.optics.array.grid_extent[1],
        )

    def mirror_model(self) -> Optional[MirrorModel]:
        mirror = self.control.mirror
        if mirror.ideal:
            return None
        return MirrorModel(natural_frequency=2 * math.pi * mirror.natural_frequency_khz * 1e3,
                           damping_ratio=mirror.damping_ratio,
                           angle_noise_sigma=self.optics.tilt_noise_urad * 1e-6)

    @staticmethod
    def _beam(beam: BeamConfig) -> IlluminationBeam:
        return IlluminationBeam(total_power=beam.power_mw * 1e-3, beam_radius_1e2=beam.radius_um * 1e-6,
                                wavelength=beam.wavelength_nm * 1e-9, transmission_factor=beam.transmission)

    def setup(self) -> ShiftRegisterSetup:
        """Domain objects for the dynamics scenarios."""
        optics, dyn = self.optics, self.dynamics
        array = MicrolensArray(
            lens_pitch=optics.array.lens_pitch_um * 1e-6,
            lens_diameter=optics.array.lens_diameter_um * 1e-6,
            focal_length=optics.array.focal_length_mm * 1e-3,
            grid_extent=tuple(optics.array.grid_extent),
        )
        telescope = RelayTelescope(
            lens1_focal=optics.telescope.lens1_focal_mm * 1e-3,
            lens2_focal=optics.telescope.lens2_focal_mm * 1e-3,
            numerical_aperture=optics.telescope.numerical_aperture,
            measured_separation=None if optics.telescope.measured_separation_um is None
            else optics.telescope.measured_separation_um * 1e-6,
        )
        integ = dyn.integrator
        integrator = IntegratorConfig(
            time_step=integ.time_step_us * 1e-6,
            loss_energy_margin=integ.loss_energy_margin,
            capture_radius=None if integ.capture_radius_um is None else integ.capture_radius_um * 1e-6,
            stencil=integ.stencil,
            lifetime=dyn.lifetime_s,
            workers=dyn.workers,
            record_interval=integ.record_interval,
        )
        beam_a1 = self._beam(optics.beam)
        return ShiftRegisterSetup(
            species=self.species_data(),
            array=array,
            telescope=telescope,
            beam_a1=beam_a1,
            beam_a2=self._beam(optics.beam_a2) if optics.beam_a2 else beam_a1,
            waist=optics.waist_um * 1e-6,
            degradation=DegradationModel(
                depth_factor_half=optics.degradation.depth_factor_half,
                waist_factor_half=optics.degradation.waist_factor_half,
                focal_shift_half=optics.degradation.focal_shift_half_um * 1e-6,
            ),
            mirror=self.mirror_model(),
            sequence=self.sequence_spec(),
            integrator=integrator,
            temperature=dyn.temperature_uk * 1e-6,
            atoms=dyn.atoms,
            seed=dyn.seed,
            settle=dyn.settle_ms * 1e-3,
            active_extent=tuple(optics.array.active_extent) if optics.array.active_extent else None,
            register_block=tuple(dyn.register_block),
        )
