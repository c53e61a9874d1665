"""Monte Carlo propagation of thermal atoms through the time-dependent trap arrays.

Atoms are classical point particles (k_B·15 µK is far above the motional quantum of
the traps). Each atom owns an RNG stream derived from (seed, atom index), so results
do not depend on how the ensemble is split across worker processes.
"""

import math
import time
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .control import (
    ChannelWaveform,
    HandoverDirection,
    MirrorModel,
    ShiftSequenceSpec,
    append_hold,
    compile_cycle,
    handover_waveform,
    mirror_response,
    settling_offsets,
    static_hold,
    transport_only,
)
from .errors import PhysicsError
from .logger import SimLogger
from .optics import (
    DegradationModel,
    IlluminationBeam,
    MicrolensArray,
    RelayTelescope,
    TiltState,
    TrapArraySnapshot,
    TrapLattice,
    array_potential,
    build_lattice,
    project_to_cell,
)
from .physics import KB, AtomSpecies, trap_frequencies

# spawn_key prefixes for the RNG streams derived from the global seed
ATOM_STREAM = 0
MIRROR_STREAM = 1
REPETITION_STREAM = 2
DEPHASING_STREAM = 3


def atom_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ATOM_STREAM, index)))


def stream_rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, *key)))


def derived_seed(seed: int, stream: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(stream, *key)).generate_state(1)[0])


@dataclass
class AtomEnsemble:
    """Phase-space coordinates and bookkeeping of a Monte Carlo ensemble."""
    positions: np.ndarray           # (N, 3) m
    velocities: np.ndarray          # (N, 3) m/s
    home_sites: np.ndarray          # (N, 2) A1 (row, col) at sampling
    alive: np.ndarray               # (N,) bool
    indices: np.ndarray             # (N,) global atom index
    exposure: np.ndarray            # (N,) unit-mean exponential draw for background loss
    seed: int
    elapsed: float = 0.0

    def __post_init__(self) -> None:
        n = self.positions.shape[0]
        for name in ("velocities", "home_sites", "alive", "indices", "exposure"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"ensemble field {name} does not match atom count {n}")
        alive = self.alive
        if not (np.all(np.isfinite(self.positions[alive])) and np.all(np.isfinite(self.velocities[alive]))):
            raise PhysicsError("alive atoms must have finite phase-space coordinates")

    @property
    def size(self) -> int:
        return int(self.positions.shape[0])

    @property
    def alive_count(self) -> int:
        return int(np.count_nonzero(self.alive))

    def copy(self) -> "AtomEnsemble":
        return AtomEnsemble(
            positions=self.positions.copy(), velocities=self.velocities.copy(),
            home_sites=self.home_sites.copy(), alive=self.alive.copy(),
            indices=self.indices.copy(), exposure=self.exposure.copy(),
            seed=self.seed, elapsed=self.elapsed,
        )

    def subset(self, mask: np.ndarray) -> "AtomEnsemble":
        return AtomEnsemble(
            positions=self.positions[mask], velocities=self.velocities[mask],
            home_sites=self.home_sites[mask], alive=self.alive[mask],
            indices=self.indices[mask], exposure=self.exposure[mask],
            seed=self.seed, elapsed=self.elapsed,
        )

    @staticmethod
    def concatenate(parts: Sequence["AtomEnsemble"]) -> "AtomEnsemble":
        if not parts:
            raise ValueError("cannot concatenate zero ensembles")
        return AtomEnsemble(
            positions=np.concatenate([p.positions for p in parts]),
            velocities=np.concatenate([p.velocities for p in parts]),
            home_sites=np.concatenate([p.home_sites for p in parts]),
            alive=np.concatenate([p.alive for p in parts]),
            indices=np.concatenate([p.indices for p in parts]),
            exposure=np.concatenate([p.exposure for p in parts]),
            seed=parts[0].seed,
            elapsed=max(p.elapsed for p in parts),
        )

    def centroid(self) -> np.ndarray:
        if self.alive_count == 0:
            return np.full(3, np.nan)
        return self.positions[self.alive].mean(axis=0)


@dataclass(frozen=True)
class IntegratorConfig:
    """Time stepping and loss classification settings."""
    time_step: float = 1e-6
    scheme: str = "velocity_verlet"
    loss_energy_margin: float = 0.0
    capture_radius: Optional[float] = None     # None: half the site separation
    stencil: int = 9
    lifetime: Optional[float] = 0.5            # background-gas lifetime, None disables
    workers: int = 1
    record_interval: int = 10                  # steps between potential-integral checkpoints

    def validate(self) -> List[str]:
        errors = []
        if self.time_step <= 0:
            errors.append("time_step must be positive")
        if self.scheme != "velocity_verlet":
            errors.append(f"unsupported integration scheme {self.scheme!r}")
        if self.loss_energy_margin < 0:
            errors.append("loss_energy_margin must be non-negative")
        if self.capture_radius is not None and self.capture_radius <= 0:
            errors.append("capture_radius must be positive")
        if self.lifetime is not None and self.lifetime <= 0:
            errors.append("lifetime must be positive")
        if self.workers < 1:
            errors.append("workers must be at least 1")
        if self.record_interval < 1:
            errors.append("record_interval must be at least 1")
        return errors


@dataclass(frozen=True)
class TrapSystem:
    """Both trap arrays, the atom species and the mirror model (None for an ideal mirror)."""
    a1: TrapLattice
    a2: TrapLattice
    species: AtomSpecies
    mirror: Optional[MirrorModel] = None

    @property
    def separation(self) -> float:
        return self.a1.geometry(0.0).pitch

    def max_radial_frequency(self) -> float:
        deepest = float(min(self.a1.base_depth.min(), self.a2.base_depth.min()))
        if deepest >= 0:
            return 0.0
        waist = min(self.a1.waist, self.a2.waist)
        return trap_frequencies(deepest, waist, self.a1.wavelength, self.species)[0]

    def with_mirror(self, mirror: Optional[MirrorModel]) -> "TrapSystem":
        return replace(self, mirror=mirror)


@dataclass
class Trajectory:
    """Per-atom record of one propagation."""
    ensemble: AtomEnsemble                    # final state
    checkpoint_times: np.ndarray              # (K,)
    potential_integral: Optional[np.ndarray]  # (N, K) cumulative ∫U dt, J·s
    potential: Optional[np.ndarray]           # (N, K) U at the checkpoints, J
    record_times: np.ndarray                  # (M,)
    positions: np.ndarray                     # (N, M, 3)
    energy_initial: np.ndarray
    energy_final: np.ndarray
    energy_deviation: np.ndarray              # max |E(t) − E(0)| per atom
    loss_time: np.ndarray                     # NaN while alive
    background_lost: np.ndarray
    duration: float


@dataclass
class TransportResult:
    """Observables of one transport, handover or register scenario."""
    label: str
    retention: float
    retention_error: float
    final_temperature: float
    temperature_error: float
    initial_temperature: float
    centroid: np.ndarray
    displacement: float
    occupancy: np.ndarray
    atoms: int
    duration: float = 0.0
    statistics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.retention <= 1.0:
            raise ValueError("retention must lie in [0, 1]")
        if self.final_temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def heating(self) -> float:
        return self.final_temperature - self.initial_temperature


def _harmonic_scale(depth: float, waist: float, wavelength: float,
                    species: AtomSpecies, temperature: float) -> Tuple[np.ndarray, float]:
    radial, axial = trap_frequencies(depth, waist, wavelength, species)
    sx = math.sqrt(KB * temperature / (species.mass * radial**2))
    sz = math.sqrt(KB * temperature / (species.mass * axial**2))
    return np.array([sx, sx, sz]), math.sqrt(KB * temperature / species.mass)


def sample_thermal(snapshot: TrapArraySnapshot, site: Tuple[int, int], temperature: float,
                   count: int, seed: int, species: AtomSpecies, first_index: int = 0,
                   wavelength: Optional[float] = None) -> AtomEnsemble:
    """Boltzmann sample of ``count`` atoms in one site, truncated at the trap depth.

    Positions are drawn from the harmonic Gaussian and accepted with the ratio of the
    Gaussian-beam to harmonic Boltzmann weights, so the sample follows the true site
    potential. Each atom consumes only its own stream.
    """
    row, col = site
    depth = float(snapshot.depth[row, col])
    if depth >= 0:
        raise PhysicsError(f"site {site} of {snapshot.array_id} is dark")
    if temperature < 0:
        raise PhysicsError("temperature must be non-negative")
    if KB * temperature >= abs(depth):
        raise PhysicsError(
            f"unbound sampling: k_B·T = {temperature * 1e6:.1f} µK is not below the "
            f"{abs(depth) / KB * 1e6:.1f} µK site depth"
        )

    wavelength = wavelength or math.pi * snapshot.waist**2 / snapshot.rayleigh
    center = snapshot.site_position(row, col)
    positions = np.tile(center, (count, 1))
    velocities = np.zeros((count, 3))
    indices = np.arange(first_index, first_index + count, dtype=np.int64)
    exposure = np.empty(count)
    w2, zr2 = snapshot.waist**2, snapshot.rayleigh**2

    if temperature == 0:
        for i, index in enumerate(indices):
            exposure[i] = atom_rng(seed, int(index)).standard_exponential()
    else:
        sigma_r, sigma_v = _harmonic_scale(depth, snapshot.waist, wavelength, species, temperature)
        kt = KB * temperature
        m = species.mass
        for i, index in enumerate(indices):
            rng = atom_rng(seed, int(index))
            while True:
                r = rng.normal(0.0, sigma_r)
                v = rng.normal(0.0, sigma_v, size=3)
                rho2 = r[0] ** 2 + r[1] ** 2
                q = 1.0 + r[2] ** 2 / zr2
                u = depth * math.exp(-2.0 * rho2 / (w2 * q)) / q
                u_harm = depth * (1.0 - 2.0 * rho2 / w2 - r[2] ** 2 / zr2)
                accept = math.exp(min(0.0, -(u - u_harm) / kt))
                if rng.random() < accept and 0.5 * m * float(v @ v) + u < 0.0:
                    break
            positions[i] += r
            velocities[i] = v
            exposure[i] = rng.standard_exponential()

    return AtomEnsemble(
        positions=positions,
        velocities=velocities,
        home_sites=np.tile(np.array(site, dtype=np.int64), (count, 1)),
        alive=np.ones(count, dtype=bool),
        indices=indices,
        exposure=exposure,
        seed=seed,
    )


def sample_register(snapshot: TrapArraySnapshot, sites: Sequence[Tuple[int, int]],
                    temperature: float, count: int, seed: int,
                    species: AtomSpecies) -> AtomEnsemble:
    """Spread ``count`` atoms evenly over several sites, atom indices contiguous."""
    parts = []
    start = 0
    for i, site in enumerate(sites):
        n = count // len(sites) + (1 if i < count % len(sites) else 0)
        if n:
            parts.append(sample_thermal(snapshot, site, temperature, n, seed, species, first_index=start))
        start += n
    return AtomEnsemble.concatenate(parts)


def estimate_temperature(ensemble: AtomEnsemble, mass: float,
                         snapshot: Optional[TrapArraySnapshot] = None,
                         capture_radius: Optional[float] = None) -> Tuple[float, float]:
    """Kinetic temperature m·var(v)/k_B averaged over axes, with its standard error.

    With a snapshot, only surviving atoms within the capture radius of one of its sites count.
    """
    mask = ensemble.alive.copy()
    if snapshot is not None:
        radius = capture_radius or snapshot.pitch / 2
        mask &= _distance_to_lattice(ensemble.positions, snapshot) <= radius
    n = int(np.count_nonzero(mask))
    if n < 2:
        raise PhysicsError(f"insufficient statistics: {n} surviving atoms, at least 2 required")
    per_axis = mass * ensemble.velocities[mask].var(axis=0, ddof=1) / KB
    temperature = float(per_axis.mean())
    error = temperature * math.sqrt(2.0 / (n - 1)) / math.sqrt(3.0)
    return temperature, error


def _distance_to_lattice(points: np.ndarray, snapshot: TrapArraySnapshot) -> np.ndarray:
    rows, cols = snapshot.grid_extent
    row, col = snapshot.nearest_site(points)
    row = np.clip(row, 0, rows - 1)
    col = np.clip(col, 0, cols - 1)
    r0, c0 = snapshot.center
    dx = points[:, 0] - ((col - c0) * snapshot.pitch + snapshot.offset_x)
    dy = points[:, 1] - (row - r0) * snapshot.pitch
    return np.sqrt(dx**2 + dy**2 + points[:, 2] ** 2)


def occupancy_histogram(ensemble: AtomEnsemble, snapshot: TrapArraySnapshot) -> np.ndarray:
    """Count surviving atoms per site of ``snapshot`` (rows, cols)."""
    grid = np.zeros(snapshot.grid_extent, dtype=np.int64)
    if ensemble.alive_count == 0:
        return grid
    points = ensemble.positions[ensemble.alive]
    row, col = snapshot.nearest_site(points)
    inside = (row >= 0) & (row < grid.shape[0]) & (col >= 0) & (col < grid.shape[1])
    np.add.at(grid, (row[inside], col[inside]), 1)
    return grid


@dataclass
class _Schedule:
    times: np.ndarray
    scale_a1: np.ndarray
    scale_a2: np.ndarray
    tilt_a1: np.ndarray
    tilt_a2: float


def build_schedule(waveform: ChannelWaveform, system: TrapSystem, time_step: float,
                   seed: Optional[int] = None) -> _Schedule:
    """Channel values on the integrator grid, with the mirror response applied."""
    steps = max(1, int(math.ceil(waveform.duration / time_step - 1e-9)))
    times = np.minimum(np.arange(steps + 1) * time_step, waveform.duration)
    s1, s2, command = waveform.evaluate(times)
    tilt = command
    if system.mirror is not None and waveform.duration > 0:
        offsets = None
        if seed is not None and system.mirror.angle_noise_sigma > 0:
            offsets = settling_offsets(waveform, times, system.mirror, stream_rng(seed, MIRROR_STREAM))
        tilt = mirror_response(system.mirror, times, command, offsets)
    return _Schedule(times=times, scale_a1=np.clip(s1, 0.0, 1.0), scale_a2=np.clip(s2, 0.0, 1.0),
                     tilt_a1=tilt, tilt_a2=waveform.a2_tilt)


@dataclass
class _ChunkTask:
    ensemble: AtomEnsemble
    schedule: _Schedule
    system: TrapSystem
    config: IntegratorConfig
    record_steps: np.ndarray
    integrate_potential: bool


def _propagate_chunk(task: _ChunkTask) -> Trajectory:
    ens = task.ensemble.copy()
    sched = task.schedule
    system = task.system
    config = task.config
    m = system.species.mass
    dt = config.time_step
    k = config.stencil
    n = ens.size
    steps = sched.times.size - 1
    capture = config.capture_radius or system.separation / 2
    threshold = config.loss_energy_margin * abs(float(system.a1.base_depth.min()))

    a2_snapshot = system.a2.snapshot(sched.tilt_a2)
    a1_cache: dict = {}

    def a1_snapshot(tilt: float) -> TrapArraySnapshot:
        snap = a1_cache.get(tilt)
        if snap is None:
            if len(a1_cache) > 4:
                a1_cache.clear()
            snap = a1_cache[tilt] = system.a1.snapshot(tilt)
        return snap

    def field_at(step: int, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        snap1 = a1_snapshot(float(sched.tilt_a1[step]))
        u1, g1 = array_potential(x, snap1, float(sched.scale_a1[step]), k)
        u2, g2 = array_potential(x, a2_snapshot, float(sched.scale_a2[step]), k)
        grad = g1 + g2
        if not np.all(np.isfinite(grad)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(grad), axis=1))[0])
            raise PhysicsError(f"non-finite force on atom {int(ens.indices[bad])} at t = {sched.times[step]:.6g} s")
        return u1 + u2, grad

    def outside(step: int, x: np.ndarray) -> np.ndarray:
        d1 = _distance_to_lattice(x, a1_snapshot(float(sched.tilt_a1[step])))
        d2 = _distance_to_lattice(x, a2_snapshot)
        return np.minimum(d1, d2) > capture

    x, v, alive = ens.positions, ens.velocities, ens.alive
    loss_time = np.full(n, np.nan)
    background = np.zeros(n, dtype=bool)
    deadline = np.full(n, np.inf) if config.lifetime is None else config.lifetime * ens.exposure - ens.elapsed

    u, grad = field_at(0, x)
    energy0 = 0.5 * m * np.sum(v * v, axis=1) + u
    deviation = np.zeros(n)

    checkpoint_steps = np.arange(0, steps + 1, config.record_interval)
    if checkpoint_steps[-1] != steps:
        checkpoint_steps = np.append(checkpoint_steps, steps)
    n_checkpoints = checkpoint_steps.size
    integral = np.zeros((n, n_checkpoints)) if task.integrate_potential else None
    potential = np.zeros((n, n_checkpoints)) if task.integrate_potential else None
    if potential is not None:
        potential[:, 0] = u
    running = np.zeros(n)
    next_checkpoint = 1

    record_positions = np.zeros((n, task.record_steps.size, 3))
    record_index = 0
    while record_index < task.record_steps.size and task.record_steps[record_index] == 0:
        record_positions[:, record_index] = x
        record_index += 1

    for step in range(steps):
        active = alive
        v_half = v - (dt / (2.0 * m)) * grad
        x_new = np.where(active[:, None], x + dt * v_half, x)
        u_new, grad_new = field_at(step + 1, x_new)
        v_new = np.where(active[:, None], v_half - (dt / (2.0 * m)) * grad_new, v)
        running += np.where(active, 0.5 * dt * (u + u_new), 0.0)
        x, v, u, grad = x_new, v_new, u_new, grad_new

        energy = 0.5 * m * np.sum(v * v, axis=1) + u
        np.maximum(deviation, np.where(active, np.abs(energy - energy0), 0.0), out=deviation)

        t_next = sched.times[step + 1]
        candidates = active & (energy > threshold)
        if np.any(candidates):
            idx = np.flatnonzero(candidates)
            escaped = idx[outside(step + 1, x[idx])]
            alive[escaped] = False
            loss_time[escaped] = t_next
        faded = alive & (deadline <= t_next)
        if np.any(faded):
            alive[faded] = False
            loss_time[faded] = t_next
            background[faded] = True

        if next_checkpoint < n_checkpoints and checkpoint_steps[next_checkpoint] == step + 1:
            if integral is not None:
                integral[:, next_checkpoint] = running
                potential[:, next_checkpoint] = u
            next_checkpoint += 1
        while record_index < task.record_steps.size and task.record_steps[record_index] == step + 1:
            record_positions[:, record_index] = x
            record_index += 1

    ens.positions, ens.velocities, ens.alive = x, v, alive
    ens.elapsed += float(sched.times[-1])
    return Trajectory(
        ensemble=ens,
        checkpoint_times=sched.times[checkpoint_steps],
        potential_integral=integral,
        potential=potential,
        record_times=sched.times[task.record_steps],
        positions=record_positions,
        energy_initial=energy0,
        energy_final=0.5 * m * np.sum(v * v, axis=1) + u,
        energy_deviation=deviation,
        loss_time=loss_time,
        background_lost=background,
        duration=float(sched.times[-1]),
    )


def _merge(parts: List[Trajectory]) -> Trajectory:
    first = parts[0]

    def stack(name: str):
        values = [getattr(p, name) for p in parts]
        return None if values[0] is None else np.concatenate(values)

    return Trajectory(
        ensemble=AtomEnsemble.concatenate([p.ensemble for p in parts]),
        checkpoint_times=first.checkpoint_times,
        potential_integral=stack("potential_integral"),
        potential=stack("potential"),
        record_times=first.record_times,
        positions=np.concatenate([p.positions for p in parts]),
        energy_initial=stack("energy_initial"),
        energy_final=stack("energy_final"),
        energy_deviation=stack("energy_deviation"),
        loss_time=stack("loss_time"),
        background_lost=stack("background_lost"),
        duration=first.duration,
    )


def propagate(ensemble: AtomEnsemble, waveform: ChannelWaveform, system: TrapSystem,
              config: IntegratorConfig = IntegratorConfig(), record_times: Sequence[float] = (),
              integrate_potential: bool = False, logger: Optional[SimLogger] = None,
              mirror_seed: Optional[int] = None) -> Trajectory:
    """Velocity-Verlet propagation of an ensemble through a compiled waveform.

    The mirror settling noise is drawn from the stream of ``mirror_seed``
    (defaults to the ensemble seed). Positions are recorded at ``record_times``.
    """
    errors = config.validate()
    if errors:
        raise PhysicsError("invalid integrator config: " + "; ".join(errors))
    radial = system.max_radial_frequency()
    if config.time_step * radial >= 0.15:
        raise PhysicsError(
            f"unstable time step: dt·Ω_r = {config.time_step * radial:.3f} rad exceeds 0.15"
        )

    started = time.perf_counter()
    seed = ensemble.seed if mirror_seed is None else mirror_seed
    schedule = build_schedule(waveform, system, config.time_step, seed)
    steps = schedule.times.size - 1
    record = np.array(
        [int(round(min(max(t, 0.0), schedule.times[-1]) / config.time_step)) for t in record_times],
        dtype=np.int64,
    )
    record = np.minimum(record, steps)

    workers = min(config.workers, max(1, ensemble.size))
    bounds = np.linspace(0, ensemble.size, workers + 1).astype(int)
    tasks = [
        _ChunkTask(ensemble.subset(slice(lo, hi)), schedule, system, config, record, integrate_potential)
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    if len(tasks) <= 1:
        parts = [_propagate_chunk(task) for task in tasks]
    else:
        with Pool(processes=len(tasks)) as pool:
            parts = pool.map(_propagate_chunk, tasks)
    if not parts:
        parts = [_propagate_chunk(_ChunkTask(ensemble.copy(), schedule, system, config, record,
                                             integrate_potential))]
    trajectory = _merge(parts)

    if logger is not None:
        logger.performance_metric(
            "propagation", time.perf_counter() - started, "s",
            atoms=ensemble.size, steps=steps, workers=len(tasks),
            survivors=trajectory.ensemble.alive_count,
        )
    return trajectory


@dataclass(frozen=True)
class ShiftRegisterSetup:
    """Everything a transport, handover or register scenario needs."""
    species: AtomSpecies
    array: MicrolensArray = MicrolensArray()
    telescope: RelayTelescope = RelayTelescope()
    beam_a1: IlluminationBeam = IlluminationBeam(275e-3, 450e-6, 805e-9)
    beam_a2: IlluminationBeam = IlluminationBeam(275e-3, 450e-6, 805e-9)
    waist: float = 3.8e-6
    degradation: DegradationModel = DegradationModel()
    mirror: Optional[MirrorModel] = MirrorModel()
    sequence: ShiftSequenceSpec = ShiftSequenceSpec()
    integrator: IntegratorConfig = IntegratorConfig()
    temperature: float = 15e-6
    atoms: int = 10_000
    seed: int = 0
    settle: float = 2e-3
    active_extent: Tuple[int, int] = (15, 15)
    register_block: Tuple[int, int] = (3, 3)

    @property
    def usable_rows(self) -> int:
        """Shift cycles the lit window can carry the loaded block through."""
        cols = self.active_extent[1] if self.active_extent else self.array.grid_extent[1]
        return max(0, (min(cols, self.array.grid_extent[1]) - self.register_block[1]) // 2)


def build_trap_system(setup: ShiftRegisterSetup, symmetric: Optional[bool] = None,
                      ideal_mirror: bool = False) -> TrapSystem:
    """Both lattices placed for the chosen handover mode.

    Asymmetric: A1 rests at −a/2 and is tilted through a full pitch, A2 sits at +a/2.
    Symmetric: A1 tilts between ∓a/2 about its base lattice; A2 is held at −a/2 tilt
    about a lattice offset by +a.
    """
    symmetric = setup.sequence.symmetric_handover if symmetric is None else symmetric
    separation = project_to_cell(setup.array, setup.telescope, TiltState()).pitch
    a1_offset, a2_offset = (0.0, separation) if symmetric else (-separation / 2, separation / 2)
    a1 = build_lattice(setup.array, setup.telescope, setup.beam_a1, setup.species, setup.waist,
                       offset=a1_offset, degradation=setup.degradation,
                       active_extent=setup.active_extent)
    a2 = build_lattice(replace(setup.array, array_id="A2"), setup.telescope, setup.beam_a2,
                       setup.species, setup.waist, offset=a2_offset,
                       degradation=setup.degradation, active_extent=setup.active_extent)
    return TrapSystem(a1=a1, a2=a2, species=setup.species,
                      mirror=None if ideal_mirror else setup.mirror)


def _final_alive(trajectory: Trajectory, system: TrapSystem, waveform: ChannelWaveform,
                 config: IntegratorConfig) -> np.ndarray:
    """Alive atoms after the closing classification: bound and inside a capture radius."""
    ens = trajectory.ensemble
    _, _, tilt = waveform.evaluate(waveform.duration)
    snap1 = system.a1.snapshot(float(tilt[0]))
    snap2 = system.a2.snapshot(waveform.a2_tilt)
    capture = config.capture_radius or system.separation / 2
    threshold = config.loss_energy_margin * abs(float(system.a1.base_depth.min()))
    inside = np.minimum(_distance_to_lattice(ens.positions, snap1),
                        _distance_to_lattice(ens.positions, snap2)) <= capture
    return ens.alive & inside & (trajectory.energy_final <= threshold)


def summarize(label: str, initial: AtomEnsemble, trajectory: Trajectory, alive: np.ndarray,
              holder: TrapArraySnapshot, mass: float, initial_temperature: float,
              exclude_background: bool = False,
              logger: Optional[SimLogger] = None) -> TransportResult:
    """Retention, temperature and centroid of the surviving atoms.

    With ``exclude_background`` the retention is taken over atoms that survived the
    background-gas draw, so it measures the trap operation alone. The final
    temperature is NaN when fewer than two atoms survive.
    """
    final = trajectory.ensemble.copy()
    final.alive = alive
    n = initial.size
    background_lost = int(np.count_nonzero(trajectory.background_lost))
    raw_retention = final.alive_count / n if n else 0.0
    denominator = n - background_lost if exclude_background else n
    retention = final.alive_count / denominator if denominator else 0.0
    retention_error = math.sqrt(retention * (1 - retention) / denominator) if denominator else 0.0
    if final.alive_count >= 2:
        temperature, temperature_error = estimate_temperature(final, mass)
    else:
        temperature, temperature_error = float("nan"), float("nan")
        if logger is not None:
            logger.warn("Temperature undefined", scenario=label, survivors=final.alive_count,
                        atoms=n)
    start = initial.centroid()
    end = final.centroid()
    return TransportResult(
        label=label,
        retention=retention,
        retention_error=retention_error,
        final_temperature=temperature,
        temperature_error=temperature_error,
        initial_temperature=initial_temperature,
        centroid=end,
        displacement=float(end[0] - start[0]) if final.alive_count else float("nan"),
        occupancy=occupancy_histogram(final, holder),
        atoms=n,
        duration=trajectory.duration,
        statistics={
            "background_lost": background_lost,
            "raw_retention": raw_retention,
            "counted_atoms": denominator,
            "max_energy_deviation": float(trajectory.energy_deviation.max()) if n else 0.0,
        },
    )


def _center_site(lattice: TrapLattice) -> Tuple[int, int]:
    return lattice.array.center_site


def _run_scenario(label: str, setup: ShiftRegisterSetup, system: TrapSystem,
                  waveform: ChannelWaveform, source: TrapArraySnapshot,
                  holder_tilt: Tuple[str, float], atoms: int, seed: int,
                  logger: Optional[SimLogger], exclude_background: bool = False
                  ) -> Tuple[TransportResult, Trajectory]:
    mass = setup.species.mass
    ensemble = sample_thermal(source, _center_site(system.a1), setup.temperature, atoms, seed,
                              setup.species)
    initial_temperature = estimate_temperature(ensemble, mass)[0] if atoms >= 2 else setup.temperature
    trajectory = propagate(ensemble, waveform, system, setup.integrator, logger=logger)
    alive = _final_alive(trajectory, system, waveform, setup.integrator)
    name, tilt = holder_tilt
    holder = (system.a1 if name == "A1" else system.a2).snapshot(tilt)
    result = summarize(label, ensemble, trajectory, alive, holder, mass, initial_temperature,
                       exclude_background=exclude_background, logger=logger)
    return result, trajectory


def _pool_results(label: str, results: List[TransportResult]) -> TransportResult:
    if len(results) == 1:
        return results[0]
    atoms = sum(r.atoms for r in results)
    background_lost = sum(r.statistics["background_lost"] for r in results)
    total = sum(r.statistics["counted_atoms"] for r in results)
    survivors = sum(r.retention * r.statistics["counted_atoms"] for r in results)
    retention = survivors / total if total else 0.0
    temperatures = np.array([r.final_temperature for r in results])
    initial = np.array([r.initial_temperature for r in results])
    centroids = np.array([r.centroid for r in results])
    return TransportResult(
        label=label,
        retention=retention,
        retention_error=math.sqrt(retention * (1 - retention) / total) if total else 0.0,
        final_temperature=float(temperatures.mean()),
        temperature_error=float(temperatures.std(ddof=1) / math.sqrt(len(results))),
        initial_temperature=float(initial.mean()),
        centroid=np.nanmean(centroids, axis=0),
        displacement=float(np.nanmean([r.displacement for r in results])),
        occupancy=np.sum([r.occupancy for r in results], axis=0),
        atoms=atoms,
        duration=results[0].duration,
        statistics={
            "repetitions": len(results),
            "background_lost": background_lost,
            "raw_retention": sum(r.statistics["raw_retention"] * r.atoms for r in results) / atoms,
            "counted_atoms": total,
        },
    )


@dataclass
class TransportScan:
    """Transport observables per duration plus the fixed-trap baseline."""
    durations: List[float]
    results: List[TransportResult]
    baseline: Optional[TransportResult] = None


def run_transport_scan(setup: ShiftRegisterSetup, durations: Sequence[float], reps: int = 1,
                       ideal_mirror: bool = False, include_baseline: bool = True,
                       logger: Optional[SimLogger] = None) -> TransportScan:
    """Transport over one site separation in A1 for each duration, then a settle hold.

    Each repetition uses an independent ensemble of ``setup.atoms // reps`` atoms.
    """
    if reps < 1:
        raise PhysicsError("reps must be at least 1")
    system = build_trap_system(setup, ideal_mirror=ideal_mirror)
    rest, shifted = setup.sequence.tilt_endpoints()
    source = system.a1.snapshot(rest)
    per_rep = max(1, setup.atoms // reps)

    results = []
    for i, duration in enumerate(durations):
        waveform = transport_only(duration, setup.sequence, hold=setup.settle)
        runs = []
        for rep in range(reps):
            seed = derived_seed(setup.seed, REPETITION_STREAM, rep)
            result, _ = _run_scenario(f"transport_{duration * 1e3:g}ms", setup, system, waveform,
                                      source, ("A1", shifted), per_rep, seed, logger,
                                      exclude_background=True)
            runs.append(result)
        pooled = _pool_results(runs[0].label, runs)
        results.append(pooled)
        if logger is not None:
            logger.progress("Transport duration done", i + 1, len(durations),
                            durationMs=duration * 1e3, retention=pooled.retention,
                            temperatureUK=pooled.final_temperature * 1e6)

    baseline = None
    if include_baseline and durations:
        hold = static_hold(max(durations) + setup.settle, rest)
        runs = []
        for rep in range(reps):
            seed = derived_seed(setup.seed, REPETITION_STREAM, rep)
            result, _ = _run_scenario("fixed_trap", setup, system, hold, source, ("A1", rest),
                                      per_rep, seed, logger,
                                      exclude_background=True)
            runs.append(result)
        baseline = _pool_results("fixed_trap", runs)

    return TransportScan(durations=list(durations), results=results, baseline=baseline)


def run_handover(setup: ShiftRegisterSetup, direction: Union[HandoverDirection, str],
                 symmetric: bool, logger: Optional[SimLogger] = None) -> TransportResult:
    """One crossfade between the arrays at the handover position, then a settle hold."""
    direction = HandoverDirection(direction)
    sequence = replace(setup.sequence, symmetric_handover=symmetric)
    setup = replace(setup, sequence=sequence)
    system = build_trap_system(setup, symmetric=symmetric)
    waveform = handover_waveform(direction, sequence, settle=setup.settle)
    rest, shifted = sequence.tilt_endpoints()

    if direction is HandoverDirection.A1_TO_A2:
        source = system.a1.snapshot(shifted)
        holder = ("A2", sequence.a2_tilt)
    else:
        source = system.a2.snapshot(sequence.a2_tilt)
        holder = ("A1", rest)
    mode = "symmetric" if symmetric else "asymmetric"
    result, _ = _run_scenario(f"handover_{direction.value}_{mode}", setup, system, waveform,
                              source, holder, setup.atoms, setup.seed, logger,
                              exclude_background=True)
    if logger is not None:
        logger.info("Handover finished", direction=direction.value, mode=mode,
                    retention=result.retention, atoms=result.atoms)
    return result


@dataclass
class RegisterResult:
    """Final observables plus one occupancy grid per completed cycle."""
    result: TransportResult
    checkpoint_times: List[float]
    movie: List[np.ndarray]
    pitch: float
    separation: float


def run_register(setup: ShiftRegisterSetup, cycles: int, symmetric: Optional[bool] = None,
                 logger: Optional[SimLogger] = None) -> RegisterResult:
    """Run ``cycles`` shift cycles on a block of loaded sites and record the occupancy."""
    symmetric = setup.sequence.symmetric_handover if symmetric is None else symmetric
    sequence = replace(setup.sequence, cycle_count=cycles, symmetric_handover=symmetric,
                       usable_rows=setup.usable_rows)
    setup = replace(setup, sequence=sequence)
    waveform = append_hold(compile_cycle(sequence), setup.settle)
    if waveform.duration <= 0:
        waveform = static_hold(setup.settle, sequence.tilt_endpoints()[0])
    system = build_trap_system(setup, symmetric=symmetric)
    rest, _ = sequence.tilt_endpoints()
    source = system.a1.snapshot(rest)

    r0, c0 = setup.array.center_site
    br, bc = setup.register_block
    sites = [(r0 + dr, c0 + dc) for dr in range(-(br // 2), br - br // 2)
             for dc in range(-(bc // 2), bc - bc // 2)]
    ensemble = sample_register(source, sites, setup.temperature, setup.atoms, setup.seed,
                               setup.species)
    mass = setup.species.mass
    initial_temperature = estimate_temperature(ensemble, mass)[0]

    checkpoints = [sequence.load_duration + c * sequence.cycle_duration for c in range(cycles + 1)]
    trajectory = propagate(ensemble, waveform, system, setup.integrator,
                           record_times=checkpoints, logger=logger)
    alive = _final_alive(trajectory, system, waveform, setup.integrator)
    result = summarize(f"register_{cycles}", ensemble, trajectory, alive, source, mass,
                       initial_temperature, logger=logger)

    movie = []
    for j, t in enumerate(trajectory.record_times):
        frame = trajectory.ensemble.copy()
        frame.positions = trajectory.positions[:, j]
        frame.alive = np.isnan(trajectory.loss_time) | (trajectory.loss_time > t)
        movie.append(occupancy_histogram(frame, source))
    if logger is not None:
        logger.info("Register finished", cycles=cycles, retention=result.retention,
                    displacementUm=result.displacement * 1e6,
                    heatingUK=result.heating * 1e6)
    return RegisterResult(result=result, checkpoint_times=[float(t) for t in trajectory.record_times],
                          movie=movie, pitch=source.pitch, separation=system.separation)


@dataclass
class HandoverCalibration:
    focal_shift_half: float
    retention: float
    target: float
    history: List[Tuple[float, float]]


def calibrate_handover(setup: ShiftRegisterSetup, target: float = 0.80, tolerance: float = 0.01,
                       max_iterations: int = 12, upper: Optional[float] = None,
                       logger: Optional[SimLogger] = None) -> HandoverCalibration:
    """Bisect the focal-shift coefficient until the asymmetric A1→A2 retention hits ``target``.

    The same seed is used at every evaluation so the objective is a deterministic
    function of the coefficient.
    """
    separation = project_to_cell(setup.array, setup.telescope, TiltState()).pitch
    lo, hi = 0.0, upper if upper is not None else separation / 8
    history: List[Tuple[float, float]] = []

    def retention_at(shift: float) -> float:
        trial = replace(setup, degradation=replace(setup.degradation, focal_shift_half=shift))
        value = run_handover(trial, HandoverDirection.A1_TO_A2, symmetric=False).retention
        history.append((shift, value))
        if logger is not None:
            logger.calibration_step("focal_shift_half", shift, value - target, retention=value)
        return value

    if retention_at(hi) > target:
        raise PhysicsError(f"focal shift {hi:.3g} m still retains more than {target:.0%}")

    best = (hi, history[-1][1])
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        value = retention_at(mid)
        if abs(value - target) < abs(best[1] - target):
            best = (mid, value)
        if abs(value - target) <= tolerance:
            break
        if value > target:
            lo = mid
        else:
            hi = mid
    return HandoverCalibration(focal_shift_half=best[0], retention=best[1], target=target,
                               history=history)
