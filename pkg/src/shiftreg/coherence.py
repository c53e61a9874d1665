"""Clock-state qubit evolution along atom trajectories: Ramsey and spin-echo sequences.

The qubit basis is (|F=2, m_F=0⟩, |F=3, m_F=0⟩). Sequence time 0 is the end of the
first π/2 pulse. Each atom sees the differential light shift δ = η·|U(r(t))|/ħ of the
trap light; the detuning is taken relative to the ensemble mean δ at t = 0.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .control import ChannelWaveform, Phase, RampShape, Segment, ShiftSequenceSpec, compile_cycle
from .dynamics import (
    DEPHASING_STREAM,
    ShiftRegisterSetup,
    Trajectory,
    build_trap_system,
    propagate,
    sample_thermal,
    stream_rng,
)
from .errors import CoverageError, FitError, PhysicsError
from .logger import SimLogger
from .physics import HBAR, KB, AtomSpecies, differential_shift_factor, photon_scattering_rate

PI_PULSE_DURATION = 210e-6


@dataclass(frozen=True)
class DephasingModel:
    """Inhomogeneous (η) and homogeneous (heating) dephasing parameters."""
    eta: float
    heating_rate: float = 0.0           # K/s
    detuning_jitter: float = 0.0        # rad/s, shot to shot
    scattering_rate: Optional[float] = None   # s⁻¹, sets the homogeneous energy kicks

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise PhysicsError("eta must be positive")
        if self.heating_rate < 0:
            raise PhysicsError("heating_rate must be non-negative")
        if self.detuning_jitter < 0:
            raise PhysicsError("detuning_jitter must be non-negative")
        if self.heating_rate > 0 and not self.scattering_rate:
            raise PhysicsError("a positive heating_rate needs the photon scattering rate")

    @classmethod
    def for_trap(cls, trap_wavelength: float, depth: float, species: AtomSpecies,
                 heating_rate: float = 0.0, detuning_jitter: float = 0.0) -> "DephasingModel":
        return cls(
            eta=differential_shift_factor(trap_wavelength, species),
            heating_rate=heating_rate,
            detuning_jitter=detuning_jitter,
            scattering_rate=photon_scattering_rate(depth, trap_wavelength, species),
        )

    @property
    def kappa(self) -> float:
        """Shift of the mean δ per unit motional energy, η/(2ħ) (rad/s per J)."""
        return self.eta / (2.0 * HBAR)

    @property
    def energy_kick(self) -> float:
        """Standard deviation of the per-half energy offset (J)."""
        if self.heating_rate == 0:
            return 0.0
        return KB * self.heating_rate / self.scattering_rate


def differential_shift(local_potential, model: DephasingModel):
    """δ = η·|U|/ħ (rad/s) for U ≤ 0; accepts scalars or arrays."""
    u = np.asarray(local_potential, dtype=float)
    if np.any(u > 0):
        raise PhysicsError("differential shift is defined for attractive potentials only")
    shift = model.eta * np.abs(u) / HBAR
    return float(shift) if shift.ndim == 0 else shift


class SequenceKind(str, Enum):
    RAMSEY = "ramsey"
    ECHO = "echo"


@dataclass(frozen=True)
class Pulse:
    start: float
    duration: float
    area: float        # rotation angle, rad
    phase: float = 0.0

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class PulseSequence:
    """Resonant drive pulses; the first π/2 pulse ends at t = 0."""
    kind: SequenceKind
    pulses: Tuple[Pulse, ...]
    t_pi: Optional[float] = None
    pi_duration: float = PI_PULSE_DURATION

    def __post_init__(self) -> None:
        for a, b in zip(self.pulses, self.pulses[1:]):
            if b.start < a.end - 1e-15:
                raise PhysicsError("pulses must be ordered and non-overlapping")
        if any(p.duration <= 0 for p in self.pulses):
            raise PhysicsError("pulse durations must be positive")

    @classmethod
    def ramsey(cls, free_time: float, pi_duration: float = PI_PULSE_DURATION) -> "PulseSequence":
        half = pi_duration / 2
        return cls(SequenceKind.RAMSEY,
                   (Pulse(-half, half, math.pi / 2), Pulse(free_time, half, math.pi / 2)),
                   pi_duration=pi_duration)

    @classmethod
    def echo(cls, t_pi: float, pi_duration: float = PI_PULSE_DURATION,
             final_start: Optional[float] = None) -> "PulseSequence":
        """π/2 – t_π – π – t_π – π/2, the π pulse centred on t_π and the last π/2 starting at 2t_π."""
        half = pi_duration / 2
        final_start = 2 * t_pi if final_start is None else final_start
        return cls(SequenceKind.ECHO,
                   (Pulse(-half, half, math.pi / 2),
                    Pulse(t_pi - half, pi_duration, math.pi),
                    Pulse(final_start, half, math.pi / 2)),
                   t_pi=t_pi, pi_duration=pi_duration)

    @property
    def detection_time(self) -> float:
        return self.pulses[-1].end

    @property
    def rabi_frequency(self) -> float:
        return math.pi / self.pi_duration

    def with_final_phase(self, phase: float) -> "PulseSequence":
        last = replace(self.pulses[-1], phase=phase)
        return replace(self, pulses=self.pulses[:-1] + (last,))

    def with_global_phase(self, offset: float) -> "PulseSequence":
        return replace(self, pulses=tuple(replace(p, phase=p.phase + offset) for p in self.pulses))


@dataclass
class PhaseHistory:
    """Per-atom accumulated differential phase ∫(δ_i − δ_ref)dt, zero at t = 0.

    Beyond the recorded span the phase is extended linearly with ``tail_rate`` when
    the trajectory ended in a static trap.
    """
    times: np.ndarray            # (K,) sequence time
    phase: np.ndarray            # (N, K)
    tail_rate: np.ndarray        # (N,)
    reference_shift: float       # δ_ref, rad/s
    extendable: bool = True
    indices: Optional[np.ndarray] = None

    @property
    def atoms(self) -> int:
        return int(self.phase.shape[0])

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        start, end = self.span
        if t < start - 1e-12:
            raise CoverageError(f"time {t:.6g} s precedes the trajectory start {start:.6g} s")
        if t > end + 1e-12:
            if not self.extendable:
                raise CoverageError(f"time {t:.6g} s exceeds the trajectory span ending at {end:.6g} s")
            return self.phase[:, -1] + self.tail_rate * (t - end)
        j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        t0, t1 = self.times[j], self.times[j + 1]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1.0 - w) * self.phase[:, j] + w * self.phase[:, j + 1]

    @classmethod
    def static(cls, detunings: np.ndarray, start: float, end: float) -> "PhaseHistory":
        """Atoms with constant detunings (rad/s) relative to their mean."""
        detunings = np.asarray(detunings, dtype=float)
        reference = float(detunings.mean()) if detunings.size else 0.0
        rel = detunings - reference
        times = np.array([start, 0.0, end]) if start < 0 < end else np.array([start, end])
        return cls(times=times, phase=rel[:, None] * times[None, :], tail_rate=rel,
                   reference_shift=reference)

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory, model: DephasingModel, t_offset: float,
                        tail_window: float = 10e-3, extendable: bool = True) -> "PhaseHistory":
        """Build from a propagation recorded with ``integrate_potential=True``.

        ``t_offset`` is the trajectory time of sequence t = 0. Only atoms alive at the
        end of the trajectory are kept.
        """
        if trajectory.potential_integral is None:
            raise ValueError("trajectory was propagated without potential integration")
        keep = trajectory.ensemble.alive
        times = trajectory.checkpoint_times - t_offset
        raw = -(model.eta / HBAR) * trajectory.potential_integral[keep]
        potential = trajectory.potential[keep]
        if not np.any(keep):
            raise PhysicsError("no surviving atoms to evolve")

        j = int(np.clip(np.searchsorted(times, 0.0, side="right") - 1, 0, times.size - 2))
        w = (0.0 - times[j]) / (times[j + 1] - times[j])
        raw0 = (1 - w) * raw[:, j] + w * raw[:, j + 1]
        u0 = (1 - w) * potential[:, j] + w * potential[:, j + 1]
        reference = float(np.mean(differential_shift(np.minimum(u0, 0.0), model)))
        phase = raw - raw0[:, None] - reference * times[None, :]

        end = times[-1]
        k = int(np.clip(np.searchsorted(times, end - tail_window), 0, times.size - 2))
        tail_rate = (phase[:, -1] - phase[:, k]) / (end - times[k])
        return cls(times=times, phase=phase, tail_rate=tail_rate, reference_shift=reference,
                   extendable=extendable, indices=trajectory.ensemble.indices[keep])


@dataclass
class HomogeneousDraws:
    """Per-atom standard-normal energy offsets for the two free-evolution halves."""
    first: np.ndarray
    second: np.ndarray

    @classmethod
    def draw(cls, indices: np.ndarray, seed: int) -> "HomogeneousDraws":
        first = np.empty(indices.size)
        second = np.empty(indices.size)
        for i, index in enumerate(indices):
            z = stream_rng(seed, DEPHASING_STREAM, 0, int(index)).standard_normal(2)
            first[i], second[i] = z
        return cls(first=first, second=second)


def _homogeneous_phase(t: float, model: DephasingModel, draws: Optional[HomogeneousDraws],
                       split: Optional[float]) -> np.ndarray:
    if model.heating_rate == 0 or draws is None or t <= 0:
        return 0.0
    sigma = model.energy_kick
    if split is None:
        offset = sigma * draws.first * t
    else:
        offset = sigma * (draws.first * min(t, split) + draws.second * max(t - split, 0.0))
    drift = 1.5 * KB * model.heating_rate * t * t
    return -model.kappa * (offset + drift)


@dataclass
class QubitRecord:
    """Two-level amplitudes (c_F2, c_F3) and accumulated phase of every atom."""
    amplitudes: np.ndarray                 # (N, 2) complex
    phase: np.ndarray                      # (N,)
    pulse_history: List[Tuple[str, float, float, float]] = field(default_factory=list)

    @classmethod
    def ground(cls, n: int) -> "QubitRecord":
        amplitudes = np.zeros((n, 2), dtype=complex)
        amplitudes[:, 0] = 1.0
        return cls(amplitudes=amplitudes, phase=np.zeros(n))

    @property
    def norm(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    @property
    def f2_population(self) -> np.ndarray:
        return np.abs(self.amplitudes[:, 0]) ** 2

    def copy(self) -> "QubitRecord":
        return QubitRecord(self.amplitudes.copy(), self.phase.copy(), list(self.pulse_history))


def free_evolution(record: QubitRecord, phase: np.ndarray) -> None:
    """Apply exp(+iφσ_z/2) for accumulated detuning phases φ."""
    half = 0.5 * np.asarray(phase)
    record.amplitudes[:, 0] *= np.exp(1j * half)
    record.amplitudes[:, 1] *= np.exp(-1j * half)
    record.phase += phase


def rabi_rotation(record: QubitRecord, rabi_frequency: float, detuning, duration: float,
                  drive_phase: float = 0.0, label: str = "pulse", start: float = 0.0) -> None:
    """Exact generalized-Rabi propagator for H = ½(−Δσ_z + Ω(cos φ σ_x + sin φ σ_y))."""
    detuning = np.broadcast_to(np.asarray(detuning, dtype=float), record.phase.shape)
    w = np.sqrt(rabi_frequency**2 + detuning**2)
    c = np.cos(0.5 * w * duration)
    s = np.sin(0.5 * w * duration)
    nz = np.where(w > 0, -detuning / np.where(w > 0, w, 1.0), 0.0)
    n_plus = np.where(w > 0, rabi_frequency / np.where(w > 0, w, 1.0), 0.0) * np.exp(1j * drive_phase)
    a, b = record.amplitudes[:, 0].copy(), record.amplitudes[:, 1].copy()
    record.amplitudes[:, 0] = (c - 1j * s * nz) * a - 1j * s * np.conj(n_plus) * b
    record.amplitudes[:, 1] = -1j * s * n_plus * a + (c + 1j * s * nz) * b
    record.phase += detuning * duration
    record.pulse_history.append((label, start, duration, drive_phase))


def evolve_qubits(history: PhaseHistory, model: DephasingModel, sequence: PulseSequence,
                  draws: Optional[HomogeneousDraws] = None, jitter: float = 0.0,
                  record: Optional[QubitRecord] = None, upto: Optional[int] = None
                  ) -> Tuple[QubitRecord, float]:
    """Run the pulse sequence on every atom and return the final F=2 population.

    ``jitter`` is a common detuning (rad/s) applied to all atoms for this shot.
    """
    split = sequence.t_pi if sequence.kind is SequenceKind.ECHO else None

    def phase_at(t: float) -> np.ndarray:
        return history.at(t) + _homogeneous_phase(t, model, draws, split) + jitter * t

    if sequence.detection_time > history.span[1] and not history.extendable:
        raise CoverageError("pulse sequence exceeds the trajectory span")
    if sequence.pulses[0].start < history.span[0] - 1e-12:
        raise CoverageError("pulse sequence starts before the trajectory")

    if record is None:
        record = QubitRecord.ground(history.atoms)
        now = sequence.pulses[0].start
        pulses = sequence.pulses
    else:
        now = sequence.pulses[upto - 1].end if upto else sequence.pulses[0].start
        pulses = sequence.pulses[upto or 0:]
    current = phase_at(now)

    for i, pulse in enumerate(pulses):
        at_start = phase_at(pulse.start)
        free_evolution(record, at_start - current)
        at_end = phase_at(pulse.end)
        detuning = (at_end - at_start) / pulse.duration
        rabi_rotation(record, pulse.area / pulse.duration, detuning, pulse.duration,
                      pulse.phase, label=f"pulse{i}", start=pulse.start)
        current = at_end

    return record, float(np.mean(record.f2_population)) if history.atoms else 0.0


FRINGE_PHASES = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)


def fringe_amplitude(history: PhaseHistory, model: DephasingModel, sequence: PulseSequence,
                     draws: Optional[HomogeneousDraws] = None, jitter: float = 0.0
                     ) -> Tuple[float, float]:
    """Amplitude (and standard error) of the F=2 fringe versus final-pulse phase."""
    partial = replace(sequence, pulses=sequence.pulses[:-1])
    before_last, _ = evolve_qubits(history, model, partial, draws, jitter)

    populations = []
    for phase in FRINGE_PHASES:
        final = sequence.with_final_phase(sequence.pulses[-1].phase + phase)
        rec, _ = evolve_qubits(history, model, final, draws, jitter, record=before_last.copy(),
                               upto=len(sequence.pulses) - 1)
        populations.append(rec.f2_population)

    p0, p1, p2, p3 = populations
    per_atom = (p0 - p2) + 1j * (p1 - p3)
    mean = per_atom.mean()
    amplitude = 0.5 * abs(mean)
    if history.atoms < 2 or amplitude == 0:
        return amplitude, 0.0
    direction = np.conj(mean) / abs(mean)
    projection = np.real(per_atom * direction)
    error = 0.5 * float(projection.std(ddof=1)) / math.sqrt(history.atoms)
    return amplitude, error


@dataclass
class GaussianFit:
    """C(2t_π) = C(0)·exp(−(2t_π)²/T₂′²) with 1σ uncertainties."""
    c0: float
    t2: float
    c0_error: float
    t2_error: float
    covariance: np.ndarray
    residuals: np.ndarray
    r_squared: float


@dataclass
class ContrastCurve:
    """Contrast versus free-evolution abscissa (2t_π for echo, T for Ramsey)."""
    kind: SequenceKind
    protocol: str
    abscissa: np.ndarray
    contrast: np.ndarray
    sigma: np.ndarray
    fit: Optional[GaussianFit] = None

    def __post_init__(self) -> None:
        if np.any(self.contrast < 0) or np.any(self.contrast > 1):
            raise ValueError("contrast must lie in [0, 1]")


def gaussian_contrast(x, c0, t2):
    return c0 * np.exp(-(x / t2) ** 2)


def fit_gaussian_contrast(abscissa: Sequence[float], contrast: Sequence[float],
                          sigma: Optional[Sequence[float]] = None) -> GaussianFit:
    """Two-parameter nonlinear least squares of the Gaussian contrast law."""
    x = np.asarray(abscissa, dtype=float)
    y = np.asarray(contrast, dtype=float)
    if x.size < 4 or x.size != y.size:
        raise FitError(f"Gaussian fit needs at least 4 points, got {x.size}")
    if np.all(y <= 0):
        raise FitError("degenerate fit: all contrasts are zero", residuals=y)
    if np.any(y < 0):
        raise FitError("contrasts must be non-negative", residuals=y)

    c0_guess = float(y.max())
    below = np.flatnonzero(y < c0_guess / math.e)
    t2_guess = float(x[below[0]]) if below.size else float(x.max())
    p0 = (c0_guess, max(t2_guess, 1e-12))
    s = None
    if sigma is not None:
        s = np.asarray(sigma, dtype=float)
        s = None if np.any(s <= 0) else s

    try:
        popt, pcov = optimize.curve_fit(gaussian_contrast, x, y, p0=p0, sigma=s,
                                        absolute_sigma=s is not None, maxfev=10000,
                                        ftol=1e-14, xtol=1e-14, gtol=1e-14)
    except (RuntimeError, optimize.OptimizeWarning) as e:
        raise FitError(f"Gaussian fit did not converge: {e}",
                       residuals=y - gaussian_contrast(x, *p0)) from e

    residuals = y - gaussian_contrast(x, *popt)
    if not np.all(np.isfinite(pcov)):
        pcov = np.zeros((2, 2)) if np.allclose(residuals, 0.0) else pcov
    if not np.all(np.isfinite(pcov)):
        raise FitError("Gaussian fit covariance is undefined", residuals=residuals)

    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - float(np.sum(residuals**2)) / total if total > 0 else 1.0
    errors = np.sqrt(np.clip(np.diag(pcov), 0.0, None))
    return GaussianFit(c0=float(popt[0]), t2=abs(float(popt[1])), c0_error=float(errors[0]),
                       t2_error=float(errors[1]), covariance=pcov, residuals=residuals,
                       r_squared=r_squared)


class Protocol(str, Enum):
    REST = "rest"
    TRANSPORT_2MS = "transport_2ms"
    HANDOVER_ROUNDTRIP = "handover_roundtrip"
    FULL_CYCLE = "full_cycle"


def ramsey_reference(history: PhaseHistory, model: DephasingModel,
                     pi_duration: float = PI_PULSE_DURATION) -> float:
    """A_R(0): fringe amplitude of back-to-back π/2 pulses."""
    amplitude, _ = fringe_amplitude(history, model, PulseSequence.ramsey(0.0, pi_duration))
    return amplitude


def echo_contrast(history: PhaseHistory, model: DephasingModel, t_pi: float,
                  draws: Optional[HomogeneousDraws] = None, reference: Optional[float] = None,
                  final_start: Optional[float] = None, jitter: float = 0.0,
                  pi_duration: float = PI_PULSE_DURATION) -> Tuple[float, float]:
    reference = reference or ramsey_reference(history, model, pi_duration)
    sequence = PulseSequence.echo(t_pi, pi_duration, final_start)
    amplitude, error = fringe_amplitude(history, model, sequence, draws, jitter)
    return min(1.0, amplitude / reference), error / reference


def echo_contrast_scan(t_pi_values: Sequence[float], history: PhaseHistory, model: DephasingModel,
                       protocol: str = Protocol.REST.value, seed: int = 0,
                       protocol_duration: float = 0.0, pi_duration: float = PI_PULSE_DURATION,
                       fit: bool = True) -> ContrastCurve:
    """Echo contrast at 2t_π for each t_π, normalized by the Ramsey amplitude at zero delay."""
    draws = HomogeneousDraws.draw(_history_indices(history), seed) if model.heating_rate > 0 else None
    reference = ramsey_reference(history, model, pi_duration)
    jitter_rng = None
    if model.detuning_jitter > 0:
        jitter_rng = stream_rng(seed, DEPHASING_STREAM, 1)

    contrast, sigma = [], []
    for t_pi in t_pi_values:
        if t_pi - pi_duration / 2 < protocol_duration:
            raise CoverageError(
                f"π pulse at t_π = {t_pi * 1e3:.3g} ms overlaps the {protocol} segment "
                f"ending at {protocol_duration * 1e3:.3g} ms"
            )
        jitter = float(jitter_rng.normal(0.0, model.detuning_jitter)) if jitter_rng else 0.0
        c, s = echo_contrast(history, model, t_pi, draws, reference, jitter=jitter,
                             pi_duration=pi_duration)
        contrast.append(c)
        sigma.append(s)

    abscissa = 2.0 * np.asarray(t_pi_values, dtype=float)
    curve = ContrastCurve(SequenceKind.ECHO, str(protocol), abscissa,
                          np.clip(contrast, 0.0, 1.0), np.asarray(sigma))
    if fit:
        curve.fit = fit_gaussian_contrast(curve.abscissa, curve.contrast)
    return curve


def echo_signal(history: PhaseHistory, model: DephasingModel, t_pi: float,
                final_starts: Sequence[float], pi_duration: float = PI_PULSE_DURATION) -> np.ndarray:
    """Echo contrast as a function of the final π/2 pulse time."""
    reference = ramsey_reference(history, model, pi_duration)
    return np.array([
        echo_contrast(history, model, t_pi, None, reference, final_start=t, pi_duration=pi_duration)[0]
        for t in final_starts
    ])


def ramsey_contrast_scan(free_times: Sequence[float], history: PhaseHistory,
                         model: DephasingModel, pi_duration: float = PI_PULSE_DURATION
                         ) -> ContrastCurve:
    reference = ramsey_reference(history, model, pi_duration)
    contrast, sigma = [], []
    for t in free_times:
        amplitude, error = fringe_amplitude(history, model, PulseSequence.ramsey(t, pi_duration))
        contrast.append(min(1.0, amplitude / reference))
        sigma.append(error / reference)
    return ContrastCurve(SequenceKind.RAMSEY, Protocol.REST.value,
                         np.asarray(free_times, dtype=float), np.asarray(contrast), np.asarray(sigma))


def ramsey_decay_time(curve: ContrastCurve) -> float:
    """First 1/e crossing of the contrast, linearly interpolated."""
    threshold = 1.0 / math.e
    x, y = curve.abscissa, curve.contrast
    below = np.flatnonzero(y < threshold)
    if below.size == 0:
        raise PhysicsError("Ramsey contrast never drops below 1/e in the scanned range")
    j = int(below[0])
    if j == 0:
        return float(x[0])
    x0, x1, y0, y1 = x[j - 1], x[j], y[j - 1], y[j]
    return float(x0 + (y0 - threshold) * (x1 - x0) / (y0 - y1))


def thermal_dephasing_time(temperature: float, eta: float) -> float:
    """T₂* = 0.97·2ħ/(η·k_B·T) for a thermal ensemble in a harmonic trap."""
    if temperature <= 0:
        raise PhysicsError("temperature must be positive")
    return 0.97 * 2.0 * HBAR / (eta * KB * temperature)


def thermal_ramsey_envelope(t, t2_star: float):
    """Ramsey contrast α(t) = [1 + 0.95·(t/T₂*)²]^(−3/2)."""
    t = np.asarray(t, dtype=float)
    value = (1.0 + 0.95 * (t / t2_star) ** 2) ** -1.5
    return float(value) if value.ndim == 0 else value


def analytic_heating_rate(t2: float, model: DephasingModel) -> float:
    """Heating rate whose homogeneous channel alone gives a Gaussian decay time ``t2``."""
    if not model.scattering_rate:
        raise PhysicsError("the photon scattering rate is required")
    return 2.0 * model.scattering_rate / (t2 * model.kappa * KB)


@dataclass
class HeatingCalibration:
    heating_rate: float
    t2: float
    target: float
    curve: ContrastCurve
    history: List[Tuple[float, float]]


def calibrate_heating(history: PhaseHistory, model: DephasingModel, t_pi_values: Sequence[float],
                      target: float = 74e-3, seed: int = 0, xtol: float = 1e-9,
                      expansion: float = 3.0, max_expansions: int = 12,
                      logger: Optional[SimLogger] = None) -> HeatingCalibration:
    """Solve for the heating rate that gives the rest echo decay time ``target``.

    The search starts from ``analytic_heating_rate`` and widens the bracket by
    ``expansion`` on the side that does not yet change sign. T₂′ falls with the
    heating rate, so a too-short T₂′ at the lower end moves it down and a too-long
    one at the upper end moves it up.
    """
    if expansion <= 1.0:
        raise PhysicsError(f"bracket expansion must exceed 1, got {expansion}")
    guess = analytic_heating_rate(target, model)
    evaluations: List[Tuple[float, float]] = []

    def objective(rate: float) -> float:
        trial = replace(model, heating_rate=rate)
        curve = echo_contrast_scan(t_pi_values, history, trial, Protocol.REST.value, seed)
        evaluations.append((rate, curve.fit.t2))
        if logger is not None:
            logger.calibration_step("heating_rate", rate, curve.fit.t2 - target,
                                    t2Ms=curve.fit.t2 * 1e3)
        return curve.fit.t2 - target

    lo, hi = guess / expansion, guess * expansion
    f_lo, f_hi = objective(lo), objective(hi)
    for _ in range(max_expansions):
        if f_lo * f_hi <= 0:
            break
        if f_lo < 0:
            hi, f_hi = lo, f_lo
            lo = lo / expansion
            f_lo = objective(lo)
        else:
            lo, f_lo = hi, f_hi
            hi = hi * expansion
            f_hi = objective(hi)
    if f_lo * f_hi > 0:
        raise PhysicsError(
            f"heating-rate bracket [{lo:.3g}, {hi:.3g}] K/s does not enclose T₂′ = {target * 1e3:.1f} ms "
            f"after {max_expansions} expansions"
        )
    rate = optimize.brentq(objective, lo, hi, xtol=xtol * guess, rtol=1e-6)
    model = replace(model, heating_rate=rate)
    curve = echo_contrast_scan(t_pi_values, history, model, Protocol.REST.value, seed)
    return HeatingCalibration(heating_rate=rate, t2=curve.fit.t2, target=target, curve=curve,
                              history=evaluations)


def _history_indices(history: PhaseHistory) -> np.ndarray:
    if history.indices is not None:
        return history.indices
    return np.arange(history.atoms)


def protocol_waveform(protocol: Protocol, sequence: ShiftSequenceSpec, lead: float,
                      window: float) -> Tuple[ChannelWaveform, float, float]:
    """Trap waveform for a coherence protocol: a hold of ``lead`` for the first π/2
    pulse, the protocol segment, then a static hold of ``window``.

    Returns the waveform, the A1 tilt the atoms are loaded at and the protocol duration.
    """
    protocol = Protocol(protocol)
    rest, shifted = sequence.tilt_endpoints()
    segments: List[Segment] = []

    if protocol is Protocol.REST:
        load_tilt, duration = rest, 0.0
        segments.append(Segment(Phase.LOAD, 0.0, lead, rest, rest, 0))
        end_tilt, end_phase = rest, Phase.LOAD
    elif protocol is Protocol.TRANSPORT_2MS:
        load_tilt, duration = rest, 2e-3
        segments += [Segment(Phase.LOAD, 0.0, lead, rest, rest, 0),
                     Segment(Phase.TRANSPORT, lead, lead + duration, rest, shifted, 0)]
        end_tilt, end_phase = shifted, Phase.LOAD
    elif protocol is Protocol.HANDOVER_ROUNDTRIP:
        h = sequence.handover_duration
        load_tilt, duration = shifted, 2 * h
        segments += [Segment(Phase.LOAD, 0.0, lead, shifted, shifted, 0),
                     Segment(Phase.HANDOVER_12, lead, lead + h, shifted, shifted, 0),
                     Segment(Phase.HANDOVER_21, lead + h, lead + 2 * h, shifted, shifted, 0)]
        end_tilt, end_phase = shifted, Phase.LOAD
    else:
        cycle = compile_cycle(replace(sequence, cycle_count=1, load_duration=0.0))
        load_tilt, duration = rest, cycle.duration
        segments.append(Segment(Phase.LOAD, 0.0, lead, rest, rest, 0))
        segments += [replace(s, start=s.start + lead, end=s.end + lead)
                     for s in cycle.segments if s.duration > 0]
        end_tilt, end_phase = rest, Phase.LOAD

    t = lead + duration
    segments.append(Segment(end_phase, t, t + window, end_tilt, end_tilt, 0))
    waveform = ChannelWaveform(segments=tuple(segments), ramp_shape=RampShape(sequence.ramp_shape),
                               crossfade=RampShape(sequence.crossfade), a2_tilt=sequence.a2_tilt,
                               cycle_count=1 if protocol is Protocol.FULL_CYCLE else 0)
    return waveform, load_tilt, duration


@dataclass
class ProtocolRun:
    protocol: Protocol
    history: PhaseHistory
    duration: float
    survivors: int
    atoms: int


def protocol_history(setup: ShiftRegisterSetup, protocol: Protocol, model: DephasingModel, window: float = 20e-3,
                     tail_window: float = 10e-3, pi_duration: float = PI_PULSE_DURATION,
                     logger: Optional[SimLogger] = None) -> ProtocolRun:
    """Propagate a thermal ensemble through a protocol and record its phase history."""
    protocol = Protocol(protocol)
    lead = pi_duration / 2
    system = build_trap_system(setup)
    waveform, load_tilt, duration = protocol_waveform(protocol, setup.sequence, lead, window)
    source = system.a1.snapshot(load_tilt)
    ensemble = sample_thermal(source, setup.array.center_site, setup.temperature, setup.atoms,
                              setup.seed, setup.species)
    trajectory = propagate(ensemble, waveform, system, setup.integrator,
                           integrate_potential=True, logger=logger)
    history = PhaseHistory.from_trajectory(trajectory, model, t_offset=lead,
                                           tail_window=min(tail_window, window))
    if logger is not None:
        logger.info("Protocol propagated", protocol=protocol.value, atoms=setup.atoms,
                    survivors=history.atoms, durationMs=duration * 1e3)
    return ProtocolRun(protocol=protocol, history=history, duration=duration,
                       survivors=history.atoms, atoms=setup.atoms)
