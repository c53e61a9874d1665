"""Trap-array synthesis: microlens geometry, illumination, relay telescope and tilt.

Array A1 is movable through the illumination angle set by the scanning mirror,
array A2 is fixed. Both produce a square lattice of Gaussian foci in the cell;
the potential of a site is

    U(ρ, z) = depth · exp(−2ρ²/w(z)²) / (1 + (z/z_R)²),   w(z)² = w₀²(1 + (z/z_R)²).

The shift axis is x, y is the other lattice direction, z the optical axis.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate, special

from .errors import PhysicsError
from .physics import AtomSpecies, dipole_potential_depth, rayleigh_range


@dataclass(frozen=True)
class MicrolensArray:
    """Square grid of refractive microlenses."""
    lens_pitch: float = 125e-6
    lens_diameter: float = 100e-6
    focal_length: float = 1e-3
    grid_extent: Tuple[int, int] = (50, 50)
    array_id: str = "A1"

    def __post_init__(self) -> None:
        if self.lens_diameter > self.lens_pitch:
            raise PhysicsError(f"{self.array_id}: lens diameter exceeds pitch")
        if self.focal_length <= 0:
            raise PhysicsError(f"{self.array_id}: focal length must be positive")
        if min(self.grid_extent) <= 0:
            raise PhysicsError(f"{self.array_id}: grid extent must be positive")
        if self.array_id not in ("A1", "A2"):
            raise PhysicsError(f"unknown array id {self.array_id!r}")

    @property
    def center_site(self) -> Tuple[int, int]:
        """Lens on the illumination axis."""
        return self.grid_extent[0] // 2, self.grid_extent[1] // 2

    @property
    def pitch_tilt(self) -> float:
        """Incidence angle that displaces the foci by one full pitch."""
        return self.lens_pitch / self.focal_length


@dataclass(frozen=True)
class RelayTelescope:
    """Two-lens relay imaging the microlens focal plane into the cell.

    ``measured_separation`` pins the effective demagnification to the measured
    trap separation; without it the nominal focal-length ratio is used.
    """
    lens1_focal: float = 80e-3
    lens2_focal: float = 35.5e-3
    numerical_aperture: float = 0.29
    measured_separation: Optional[float] = 55e-6

    def __post_init__(self) -> None:
        if self.lens1_focal <= self.lens2_focal:
            raise PhysicsError("telescope must demagnify (lens1_focal > lens2_focal)")
        if not 0 < self.numerical_aperture < 1:
            raise PhysicsError("numerical aperture must lie in (0, 1)")

    @property
    def nominal_demagnification(self) -> float:
        return self.lens1_focal / self.lens2_focal

    def demagnification(self, array: MicrolensArray) -> float:
        if self.measured_separation is None:
            return self.nominal_demagnification
        return array.lens_pitch / self.measured_separation


@dataclass(frozen=True)
class IlluminationBeam:
    """Gaussian beam illuminating a microlens array."""
    total_power: float
    beam_radius_1e2: float
    wavelength: float
    transmission_factor: float = 0.85

    def __post_init__(self) -> None:
        if not 0 < self.transmission_factor <= 1:
            raise PhysicsError("transmission factor must lie in (0, 1]")
        if self.total_power <= 0 or self.beam_radius_1e2 <= 0 or self.wavelength <= 0:
            raise PhysicsError("beam power, radius and wavelength must be positive")


@dataclass(frozen=True)
class TiltState:
    """Mirror-induced incidence angle on an array."""
    tilt_angle: float = 0.0
    reproducibility_noise: float = 22e-6


@dataclass(frozen=True)
class DegradationModel:
    """Quadratic-in-tilt deformation of tilted-illumination foci.

    Values are given at the half-pitch tilt; the law is
    f(θ) = 1 + (f_half − 1)·(θ/θ_half)², and the same for the focal shift.
    """
    depth_factor_half: float = 0.92
    waist_factor_half: float = 1.04
    focal_shift_half: float = 1.75e-6

    def __post_init__(self) -> None:
        if not 0 < self.depth_factor_half <= 1:
            raise PhysicsError("depth factor must lie in (0, 1]")
        if self.waist_factor_half < 1:
            raise PhysicsError("waist factor must be at least 1")


class TiltDegradation(NamedTuple):
    depth_factor: float
    waist_factor: float
    focal_shift: float


class CellGeometry(NamedTuple):
    """Lattice placement of one array in the cell plane."""
    pitch: float
    displacement: float   # tilt-induced, along x
    offset: float         # fixed lateral offset, along x


def per_lens_power(beam: IlluminationBeam, array: MicrolensArray, site: Tuple[int, int]) -> float:
    """Power transmitted through one lens aperture (W).

    The beam is centred on ``array.center_site``. The angular part of the aperture
    integral is done analytically, which leaves a radial integral over the lens disc.
    """
    row, col = site
    rows, cols = array.grid_extent
    if not (0 <= row < rows and 0 <= col < cols):
        raise IndexError(f"lens site {site} outside grid {array.grid_extent}")

    r0, c0 = array.center_site
    d = math.hypot(row - r0, col - c0) * array.lens_pitch
    w = beam.beam_radius_1e2
    radius = array.lens_diameter / 2
    i_peak = 2 * beam.total_power / (math.pi * w**2)

    if d == 0:
        captured = beam.total_power * -math.expm1(-2 * radius**2 / w**2)
    else:
        def integrand(rho: float) -> float:
            # exp(-2(ρ²+d²)/w²)·I0(4ρd/w²), written with the scaled Bessel function
            return rho * math.exp(-2 * (rho - d) ** 2 / w**2) * special.i0e(4 * rho * d / w**2)

        radial, _ = integrate.quad(integrand, 0.0, radius, epsabs=0.0, epsrel=1e-12, limit=200)
        captured = i_peak * 2 * math.pi * radial

    return beam.transmission_factor * captured


def project_to_cell(array: MicrolensArray, telescope: RelayTelescope, tilt: TiltState,
                    offset: Optional[float] = None) -> CellGeometry:
    """Place the foci of ``array`` in the cell plane.

    The tilt shifts the microlens foci by focal_length·θ, demagnified by the relay.
    A2 defaults to a fixed +a/2 offset along the shift axis.
    """
    demag = telescope.demagnification(array)
    pitch = array.lens_pitch / demag
    if offset is None:
        offset = pitch / 2 if array.array_id == "A2" else 0.0
    displacement = array.focal_length * tilt.tilt_angle / demag
    return CellGeometry(pitch=pitch, displacement=displacement, offset=offset)


def tilt_for_displacement(displacement: float, array: MicrolensArray,
                          telescope: RelayTelescope) -> float:
    """Incidence angle producing a given cell-plane displacement."""
    return displacement * telescope.demagnification(array) / array.focal_length


def tilt_degradation(tilt: TiltState, array: MicrolensArray,
                     model: DegradationModel = DegradationModel()) -> TiltDegradation:
    """Depth, waist and focal-shift deformation of tilted foci (even in tilt)."""
    limit = array.pitch_tilt
    theta = abs(tilt.tilt_angle)
    if theta > limit * (1 + 1e-9):
        raise PhysicsError(
            f"tilt {tilt.tilt_angle:.4g} rad displaces {array.array_id} by more than one pitch: "
            "outside the degradation model"
        )
    u2 = (theta / (limit / 2)) ** 2
    return TiltDegradation(
        depth_factor=1 + (model.depth_factor_half - 1) * u2,
        waist_factor=1 + (model.waist_factor_half - 1) * u2,
        focal_shift=model.focal_shift_half * u2,
    )


@dataclass(frozen=True)
class TrapArraySnapshot:
    """One array's lattice of foci at an instant.

    Site (row, col) sits at x = (col − c0)·pitch + offset_x, y = (row − r0)·pitch, z = 0.
    """
    array_id: str
    pitch: float
    offset_x: float
    depth: np.ndarray = field(repr=False)   # (rows, cols), J, ≤ 0
    waist: float
    rayleigh: float
    center: Tuple[int, int]

    @property
    def grid_extent(self) -> Tuple[int, int]:
        return self.depth.shape

    @property
    def separation(self) -> float:
        return self.pitch

    def site_position(self, row: int, col: int) -> np.ndarray:
        r0, c0 = self.center
        return np.array([(col - c0) * self.pitch + self.offset_x, (row - r0) * self.pitch, 0.0])

    def site_positions(self) -> np.ndarray:
        """(rows, cols, 3) array of site centres."""
        rows, cols = self.depth.shape
        r0, c0 = self.center
        rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        return np.stack([(cc - c0) * self.pitch + self.offset_x,
                         (rr - r0) * self.pitch,
                         np.zeros(rr.shape)], axis=-1)

    def nearest_site(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest lattice indices (row, col) of points, unclipped."""
        r0, c0 = self.center
        col = np.rint((points[..., 0] - self.offset_x) / self.pitch).astype(np.int64) + c0
        row = np.rint(points[..., 1] / self.pitch).astype(np.int64) + r0
        return row, col


@dataclass(frozen=True)
class TrapLattice:
    """Static per-site depths of one array at normal incidence."""
    array: MicrolensArray
    telescope: RelayTelescope
    base_depth: np.ndarray = field(repr=False)
    waist: float
    wavelength: float
    offset: float
    degradation: DegradationModel = DegradationModel()

    def geometry(self, tilt_angle: float) -> CellGeometry:
        return project_to_cell(self.array, self.telescope, TiltState(tilt_angle), offset=self.offset)

    def snapshot(self, tilt_angle: float = 0.0) -> TrapArraySnapshot:
        """Lattice of foci at a given incidence angle."""
        geometry = self.geometry(tilt_angle)
        factors = tilt_degradation(TiltState(tilt_angle), self.array, self.degradation)
        waist = self.waist * factors.waist_factor
        return TrapArraySnapshot(
            array_id=self.array.array_id,
            pitch=geometry.pitch,
            offset_x=geometry.offset + geometry.displacement + factors.focal_shift,
            depth=self.base_depth * factors.depth_factor,
            waist=waist,
            rayleigh=rayleigh_range(waist, self.wavelength),
            center=self.array.center_site,
        )


def build_lattice(array: MicrolensArray, telescope: RelayTelescope, beam: IlluminationBeam,
                  species: AtomSpecies, waist: float = 3.8e-6, offset: Optional[float] = None,
                  degradation: DegradationModel = DegradationModel(),
                  active_extent: Optional[Tuple[int, int]] = None) -> TrapLattice:
    """Compute per-site depths from the aperture powers.

    Sites outside the centred ``active_extent`` window are left dark (depth 0).
    """
    rows, cols = array.grid_extent
    r0, c0 = array.center_site
    depth = np.zeros((rows, cols))
    half_r = rows if active_extent is None else active_extent[0] // 2
    half_c = cols if active_extent is None else active_extent[1] // 2
    for row in range(max(0, r0 - half_r), min(rows, r0 + half_r + 1)):
        for col in range(max(0, c0 - half_c), min(cols, c0 + half_c + 1)):
            power = per_lens_power(beam, array, (row, col))
            depth[row, col] = dipole_potential_depth(power, waist, beam.wavelength, species)
    if offset is None:
        offset = project_to_cell(array, telescope, TiltState()).offset
    depth.setflags(write=False)
    return TrapLattice(array=array, telescope=telescope, base_depth=depth, waist=waist,
                       wavelength=beam.wavelength, offset=offset, degradation=degradation)


def _site_terms(points: np.ndarray, centers: np.ndarray, depth: np.ndarray,
                waist: float, rayleigh: float) -> Tuple[np.ndarray, np.ndarray]:
    """Potential (N, M) and gradient (N, M, 3) of M sites at N points.

    ``centers`` is (M, 3) for sites shared by every point or (N, M, 3) for a
    per-point stencil; ``depth`` broadcasts the same way.
    """
    d = points[:, None, :] - centers
    rho2 = d[..., 0] ** 2 + d[..., 1] ** 2
    q = 1.0 + (d[..., 2] / rayleigh) ** 2
    w2 = waist**2 * q
    u = depth * np.exp(-2.0 * rho2 / w2) / q
    grad = np.empty(d.shape)
    grad[..., 0] = u * (-4.0 * d[..., 0] / w2)
    grad[..., 1] = u * (-4.0 * d[..., 1] / w2)
    grad[..., 2] = u * (2.0 * d[..., 2] / rayleigh**2) * (2.0 * rho2 / w2 - 1.0) / q
    return u, grad


def _stencil(k: int) -> np.ndarray:
    half = int(round(math.sqrt(k))) // 2
    if (2 * half + 1) ** 2 != k:
        raise ValueError(f"stencil size must be an odd square (1, 9, 25, ...), got {k}")
    offsets = np.arange(-half, half + 1)
    dr, dc = np.meshgrid(offsets, offsets, indexing="ij")
    return np.stack([dr.ravel(), dc.ravel()], axis=-1)


def array_potential(points: np.ndarray, snapshot: TrapArraySnapshot, scale: float = 1.0,
                    k: Optional[int] = 9) -> Tuple[np.ndarray, np.ndarray]:
    """Potential (N,) and gradient (N, 3) of one scaled array; ``k=None`` sums every site."""
    points = np.atleast_2d(points)
    n = points.shape[0]
    if scale == 0.0:
        return np.zeros(n), np.zeros((n, 3))

    if k is None:
        centers = snapshot.site_positions().reshape(-1, 3)
        depth = snapshot.depth.ravel() * scale
        u, grad = _site_terms(points, centers, depth, snapshot.waist, snapshot.rayleigh)
        return u.sum(axis=1), grad.sum(axis=1)

    rows, cols = snapshot.depth.shape
    r0, c0 = snapshot.center
    row, col = snapshot.nearest_site(points)
    stencil = _stencil(k)
    sr = row[:, None] + stencil[:, 0]
    sc = col[:, None] + stencil[:, 1]
    inside = (sr >= 0) & (sr < rows) & (sc >= 0) & (sc < cols)
    depth = np.where(inside, snapshot.depth[np.clip(sr, 0, rows - 1), np.clip(sc, 0, cols - 1)], 0.0)
    centers = np.stack([(sc - c0) * snapshot.pitch + snapshot.offset_x,
                        (sr - r0) * snapshot.pitch,
                        np.zeros(sr.shape)], axis=-1)
    u, grad = _site_terms(points, centers, depth * scale, snapshot.waist, snapshot.rayleigh)
    return u.sum(axis=1), grad.sum(axis=1)


def potential_and_gradient(points: np.ndarray, a1: TrapArraySnapshot, s1: float,
                           a2: TrapArraySnapshot, s2: float,
                           k: Optional[int] = 9) -> Tuple[np.ndarray, np.ndarray]:
    """Summed potential (J) and analytic gradient (J/m) of both scaled arrays."""
    if not (0.0 <= s1 <= 1.0 and 0.0 <= s2 <= 1.0):
        raise PhysicsError(f"depth scales must lie in [0, 1], got ({s1}, {s2})")
    u1, g1 = array_potential(points, a1, s1, k)
    u2, g2 = array_potential(points, a2, s2, k)
    return u1 + u2, g1 + g2
