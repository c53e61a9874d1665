"""Shift-sequence compilation and scanning-mirror response.

A cycle moves the atoms held by A1 by one site: A1 is tilted across one pitch of
displacement, the atoms are handed over to A2, A1 returns with its light off and
takes the atoms back from A2. Tilt angles are expressed in radians of incidence on
the microlens array; ``pitch_tilt`` is the angle that displaces the foci by one site.
"""

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import signal

from .errors import CapacityError, CoverageError, PhysicsError


class RampShape(str, Enum):
    """Interpolation law for tilt moves and crossfades."""
    LINEAR = "linear"
    SMOOTHSTEP = "smoothstep"
    MINIMUM_JERK = "minimum_jerk"


class Phase(str, Enum):
    """Timeline segment labels."""
    LOAD = "load"
    TRANSPORT = "transport"
    HANDOVER_12 = "handover_12"
    RETURN = "return"
    HANDOVER_21 = "handover_21"


def ramp(shape: Union[RampShape, str], t_normalized):
    """Monotone ramp from 0 to 1 on [0, 1].

    smoothstep is 3t² − 2t³, minimum_jerk is 10t³ − 15t⁴ + 6t⁵.
    Accepts scalars or numpy arrays.
    """
    shape = RampShape(shape)
    t = np.asarray(t_normalized, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)) or np.any(np.isnan(t)):
        raise ValueError("ramp argument must lie in [0, 1]")

    if shape is RampShape.LINEAR:
        value = t
    elif shape is RampShape.SMOOTHSTEP:
        value = t * t * (3.0 - 2.0 * t)
    else:
        value = t**3 * (10.0 + t * (-15.0 + 6.0 * t))

    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class ShiftSequenceSpec:
    """Timing description of one or more shift cycles."""
    transport_duration: float = 2e-3
    handover_duration: float = 5e-3
    return_duration: float = 5e-3
    cycle_count: int = 1
    ramp_shape: RampShape = RampShape.MINIMUM_JERK
    symmetric_handover: bool = False
    load_duration: float = 0.0
    crossfade: RampShape = RampShape.LINEAR
    pitch_tilt: float = 0.125
    usable_rows: int = 50

    def validate(self) -> List[str]:
        """Validate the sequence and return a list of errors."""
        errors = []
        for name in ("transport_duration", "handover_duration", "return_duration"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive")
        if self.load_duration < 0:
            errors.append("load_duration must be non-negative")
        if self.cycle_count < 0:
            errors.append("cycle_count must be non-negative")
        if self.pitch_tilt <= 0:
            errors.append("pitch_tilt must be positive")
        return errors

    @property
    def cycle_duration(self) -> float:
        return self.transport_duration + 2 * self.handover_duration + self.return_duration

    def tilt_endpoints(self) -> Tuple[float, float]:
        """A1 tilt (start, end) of a transport move."""
        if self.symmetric_handover:
            return -self.pitch_tilt / 2, self.pitch_tilt / 2
        return 0.0, self.pitch_tilt

    @property
    def a2_tilt(self) -> float:
        """Static tilt of A2."""
        return -self.pitch_tilt / 2 if self.symmetric_handover else 0.0


@dataclass(frozen=True)
class Segment:
    phase: Phase
    start: float
    end: float
    tilt_start: float
    tilt_end: float
    cycle: int

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ChannelWaveform:
    """Piecewise-analytic control channels for both arrays and the mirror.

    ``evaluate`` gives the exact channel values at any time; ``sample`` discretizes
    them on the waveform grid.
    """
    segments: Tuple[Segment, ...]
    ramp_shape: RampShape
    crossfade: RampShape
    a2_tilt: float
    cycle_count: int
    sample_rate: float = 100e3

    @property
    def duration(self) -> float:
        return self.segments[-1].end if self.segments else 0.0

    @property
    def net_displacement_sites(self) -> int:
        """Displacement of the atoms in units of the site separation."""
        return self.cycle_count

    def transfer_distance(self, separation: float) -> float:
        return self.cycle_count * separation

    def _segment_index(self, t: np.ndarray) -> np.ndarray:
        ends = np.array([s.end for s in self.segments])
        return np.minimum(np.searchsorted(ends, t, side="right"), len(self.segments) - 1)

    def evaluate(self, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (depth_scale_A1, depth_scale_A2, commanded_tilt) at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -1e-12) or np.any(t > self.duration + 1e-12):
            raise CoverageError(
                f"times outside waveform span [0, {self.duration:.6g}] s"
            )
        s1 = np.empty(t.shape)
        s2 = np.empty(t.shape)
        tilt = np.empty(t.shape)
        index = self._segment_index(t)

        for i, seg in enumerate(self.segments):
            mask = index == i
            if not np.any(mask):
                continue
            if seg.duration > 0:
                u = np.clip((t[mask] - seg.start) / seg.duration, 0.0, 1.0)
            else:
                u = np.ones(int(mask.sum()))
            move = ramp(self.ramp_shape, u)
            tilt[mask] = seg.tilt_start + (seg.tilt_end - seg.tilt_start) * move
            fade = ramp(self.crossfade, u)
            if seg.phase in (Phase.LOAD, Phase.TRANSPORT):
                s1[mask], s2[mask] = 1.0, 0.0
            elif seg.phase is Phase.HANDOVER_12:
                s1[mask], s2[mask] = 1.0 - fade, fade
            elif seg.phase is Phase.RETURN:
                s1[mask], s2[mask] = 0.0, 1.0
            else:
                s1[mask], s2[mask] = fade, 1.0 - fade

        return s1, s2, tilt

    def phase_at(self, t: float) -> Phase:
        return self.segments[int(self._segment_index(np.array([t]))[0])].phase

    def phase_spans(self, phase: Phase) -> List[Tuple[float, float]]:
        return [(s.start, s.end) for s in self.segments if s.phase is phase]

    def sample(self, sample_rate: Optional[float] = None) -> "WaveformSamples":
        rate = sample_rate or self.sample_rate
        count = int(round(self.duration * rate)) + 1
        times = np.linspace(0.0, self.duration, count)
        s1, s2, tilt = self.evaluate(times)
        labels = [self.segments[i].phase.value for i in self._segment_index(times)]
        return WaveformSamples(times=times, depth_scale_a1=s1, depth_scale_a2=s2,
                               commanded_tilt=tilt, labels=labels)


@dataclass
class WaveformSamples:
    """Time-sampled channels, optionally with the actual mirror tilt."""
    times: np.ndarray
    depth_scale_a1: np.ndarray
    depth_scale_a2: np.ndarray
    commanded_tilt: np.ndarray
    labels: List[str] = field(default_factory=list)
    actual_tilt: Optional[np.ndarray] = None


def compile_cycle(spec: ShiftSequenceSpec, sample_rate: float = 100e3) -> ChannelWaveform:
    """Compile ``spec.cycle_count`` identical shift cycles into a channel waveform."""
    errors = spec.validate()
    if errors:
        raise PhysicsError("invalid shift sequence: " + "; ".join(errors))
    if spec.cycle_count > spec.usable_rows:
        raise CapacityError(
            f"{spec.cycle_count} shift cycles exceed the {spec.usable_rows} usable array rows"
        )

    rest, shifted = spec.tilt_endpoints()
    segments = [Segment(Phase.LOAD, 0.0, spec.load_duration, rest, rest, 0)]
    t = spec.load_duration
    layout = (
        (Phase.TRANSPORT, spec.transport_duration, rest, shifted),
        (Phase.HANDOVER_12, spec.handover_duration, shifted, shifted),
        (Phase.RETURN, spec.return_duration, shifted, rest),
        (Phase.HANDOVER_21, spec.handover_duration, rest, rest),
    )
    for cycle in range(spec.cycle_count):
        for phase, duration, tilt_start, tilt_end in layout:
            segments.append(Segment(phase, t, t + duration, tilt_start, tilt_end, cycle))
            t += duration

    return ChannelWaveform(
        segments=tuple(segments),
        ramp_shape=RampShape(spec.ramp_shape),
        crossfade=RampShape(spec.crossfade),
        a2_tilt=spec.a2_tilt,
        cycle_count=spec.cycle_count,
        sample_rate=sample_rate,
    )


def transport_only(duration: float, spec: ShiftSequenceSpec,
                   hold: float = 0.0) -> ChannelWaveform:
    """A single A1 transport move over one pitch followed by an optional hold in A1."""
    if duration <= 0:
        raise PhysicsError("transport duration must be positive")
    rest, shifted = spec.tilt_endpoints()
    segments = (
        Segment(Phase.LOAD, 0.0, 0.0, rest, rest, 0),
        Segment(Phase.TRANSPORT, 0.0, duration, rest, shifted, 0),
        Segment(Phase.LOAD, duration, duration + hold, shifted, shifted, 0),
    )
    return ChannelWaveform(segments=segments, ramp_shape=RampShape(spec.ramp_shape),
                           crossfade=RampShape(spec.crossfade), a2_tilt=spec.a2_tilt,
                           cycle_count=0)


def static_hold(duration: float, tilt: float = 0.0) -> ChannelWaveform:
    """A1 at full depth, A2 dark, mirror at rest."""
    segments = (Segment(Phase.LOAD, 0.0, duration, tilt, tilt, 0),)
    return ChannelWaveform(segments=segments, ramp_shape=RampShape.LINEAR,
                           crossfade=RampShape.LINEAR, a2_tilt=0.0, cycle_count=0)


@dataclass(frozen=True)
class MirrorModel:
    """Second-order linear response of the scanning mirror."""
    natural_frequency: float = 2 * np.pi * 11e3
    damping_ratio: float = 0.25
    angle_noise_sigma: float = 22e-6

    def __post_init__(self) -> None:
        if self.natural_frequency <= 0:
            raise PhysicsError("mirror natural frequency must be positive")
        if not 0 < self.damping_ratio < 2:
            raise PhysicsError("mirror damping ratio must lie in (0, 2)")
        if self.angle_noise_sigma < 0:
            raise PhysicsError("mirror angle noise must be non-negative")

    def state_space(self) -> signal.StateSpace:
        w, z = self.natural_frequency, self.damping_ratio
        return signal.StateSpace([[0.0, 1.0], [-w * w, -2.0 * z * w]], [[0.0], [w * w]],
                                 [[1.0, 0.0], [0.0, 1.0]], [[0.0], [0.0]])


def mirror_trajectory(model: MirrorModel, times: np.ndarray,
                      command: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Angle and angular rate of the mirror driven by ``command``; starts at rest on command[0]."""
    times = np.asarray(times, dtype=float)
    command = np.asarray(command, dtype=float)
    if times.shape != command.shape or times.size < 2:
        raise ValueError("times and command must be equal-length 1-D arrays")
    if not np.all(np.isfinite(command)):
        raise PhysicsError("mirror command must be finite")
    _, _, state = signal.lsim(model.state_space(), U=command, T=times, X0=[command[0], 0.0])
    return state[:, 0], state[:, 1]


def mirror_response(model: MirrorModel, times: np.ndarray, command: np.ndarray,
                    offsets: Optional[np.ndarray] = None) -> np.ndarray:
    """Actual mirror angle for a commanded trajectory, including positioning offsets."""
    drive = np.asarray(command, dtype=float)
    if offsets is not None:
        drive = drive + offsets
    angle, _ = mirror_trajectory(model, times, drive)
    return angle


def settling_offsets(waveform: ChannelWaveform, times: np.ndarray, model: MirrorModel,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-move positioning error of the mirror.

    Each tilt move draws one offset of σ = angle_noise_sigma that is blended in along
    the move's ramp and held until the next move.
    """
    times = np.asarray(times, dtype=float)
    offsets = np.zeros(times.shape)
    previous = 0.0
    for seg in waveform.segments:
        if seg.tilt_start == seg.tilt_end or seg.duration <= 0:
            continue
        current = float(rng.normal(0.0, model.angle_noise_sigma)) if model.angle_noise_sigma else 0.0
        during = (times >= seg.start) & (times < seg.end)
        u = (times[during] - seg.start) / seg.duration
        offsets[during] = previous + (current - previous) * ramp(waveform.ramp_shape, u)
        offsets[times >= seg.end] = current
        previous = current
    return offsets


WAVEFORM_COLUMNS = ("t", "sA1", "sA2", "tilt_cmd", "tilt_actual")


def export_waveform(samples: WaveformSamples, path: Union[str, Path]) -> Path:
    """Write sampled channels as CSV with round-trip exact floats."""
    path = Path(path)
    actual = samples.actual_tilt if samples.actual_tilt is not None else samples.commanded_tilt
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(WAVEFORM_COLUMNS)
        for row in zip(samples.times, samples.depth_scale_a1, samples.depth_scale_a2,
                       samples.commanded_tilt, actual):
            writer.writerow([repr(float(v)) for v in row])
    return path


def import_waveform(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read a waveform CSV written by ``export_waveform``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != WAVEFORM_COLUMNS:
            raise ValueError(f"{path}: expected columns {', '.join(WAVEFORM_COLUMNS)}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(WAVEFORM_COLUMNS))
    return {name: data[:, i].copy() for i, name in enumerate(WAVEFORM_COLUMNS)}


class HandoverDirection(str, Enum):
    A1_TO_A2 = "A1->A2"
    A2_TO_A1 = "A2->A1"


def handover_waveform(direction: Union[HandoverDirection, str], spec: ShiftSequenceSpec,
                      settle: float = 0.0) -> ChannelWaveform:
    """A single crossfade at the handover tilt, followed by a hold in the receiving array."""
    direction = HandoverDirection(direction)
    rest, shifted = spec.tilt_endpoints()
    h = spec.handover_duration
    if direction is HandoverDirection.A1_TO_A2:
        segments = (
            Segment(Phase.TRANSPORT, 0.0, 0.0, shifted, shifted, 0),
            Segment(Phase.HANDOVER_12, 0.0, h, shifted, shifted, 0),
            Segment(Phase.RETURN, h, h + settle, shifted, shifted, 0),
        )
    else:
        segments = (
            Segment(Phase.RETURN, 0.0, 0.0, rest, rest, 0),
            Segment(Phase.HANDOVER_21, 0.0, h, rest, rest, 0),
            Segment(Phase.LOAD, h, h + settle, rest, rest, 0),
        )
    return ChannelWaveform(segments=segments, ramp_shape=RampShape(spec.ramp_shape),
                           crossfade=RampShape(spec.crossfade), a2_tilt=spec.a2_tilt,
                           cycle_count=0)


def append_hold(waveform: ChannelWaveform, duration: float) -> ChannelWaveform:
    """Extend a waveform by holding its final channel values."""
    if duration <= 0:
        return waveform
    last = waveform.segments[-1]
    if last.phase in (Phase.LOAD, Phase.TRANSPORT, Phase.HANDOVER_21):
        hold_phase = Phase.LOAD
    else:
        hold_phase = Phase.RETURN
    hold = Segment(hold_phase, last.end, last.end + duration, last.tilt_end, last.tilt_end, last.cycle)
    return replace(waveform, segments=waveform.segments + (hold,))
