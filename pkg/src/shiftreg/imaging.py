"""Synthetic occupancy images of the register."""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass
class OccupancyImage:
    """Site-binned atom counts rendered on a pixel grid and blurred by a point-spread function."""
    pixels: np.ndarray        # (H, W) float, non-negative
    pixel_pitch: float        # m
    counts: np.ndarray        # (rows, cols) histogram the image was rendered from
    time: float = 0.0
    label: str = ""

    def __post_init__(self) -> None:
        if np.any(self.pixels < -1e-12):
            raise ValueError("occupancy image must be non-negative")

    @property
    def total(self) -> float:
        return float(self.pixels.sum())

    def centroid(self) -> np.ndarray:
        """Intensity-weighted (x, y) centre in metres, pixel (0, 0) at the origin."""
        total = self.pixels.sum()
        if total <= 0:
            return np.full(2, np.nan)
        ys, xs = np.indices(self.pixels.shape)
        return np.array([(xs * self.pixels).sum() / total,
                         (ys * self.pixels).sum() / total]) * self.pixel_pitch


def subsample_counts(counts: np.ndarray, atoms: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``atoms`` atoms without replacement from a histogram."""
    total = int(counts.sum())
    if atoms >= total:
        return counts.copy()
    flat = rng.multivariate_hypergeometric(counts.ravel().astype(np.int64), atoms)
    return flat.reshape(counts.shape)


def render_image(counts: np.ndarray, separation: float, pixels_per_site: int = 1,
                 blur_sigma: float = 0.0, time: float = 0.0, label: str = "") -> OccupancyImage:
    """Place each site's count at its centre pixel and blur with a Gaussian PSF.

    ``blur_sigma`` is in metres; zero leaves the image equal to the raw histogram.
    """
    if pixels_per_site < 1:
        raise ValueError("pixels_per_site must be at least 1")
    rows, cols = counts.shape
    pixels = np.zeros((rows * pixels_per_site, cols * pixels_per_site))
    offset = pixels_per_site // 2
    pixels[offset::pixels_per_site, offset::pixels_per_site] = counts
    pitch = separation / pixels_per_site
    if blur_sigma > 0:
        pixels = gaussian_filter(pixels, sigma=blur_sigma / pitch, mode="constant")
    return OccupancyImage(pixels=pixels, pixel_pitch=pitch, counts=counts.copy(), time=time, label=label)


def render_register_images(movie: Sequence[np.ndarray], separation: float,
                           times: Optional[Sequence[float]] = None, pixels_per_site: int = 4,
                           blur_sigma: float = 0.0, physical_atoms: Optional[int] = None,
                           seed: int = 0) -> List[OccupancyImage]:
    """One image per occupancy checkpoint of a register run.

    With ``physical_atoms`` each frame is sub-sampled to that many atoms, as in a
    single experimental shot.
    """
    rng = np.random.default_rng(seed)
    times = list(times) if times is not None else [0.0] * len(movie)
    images = []
    for k, (counts, t) in enumerate(zip(movie, times)):
        counts = np.asarray(counts, dtype=np.int64)
        if physical_atoms is not None:
            counts = subsample_counts(counts, physical_atoms, rng)
        images.append(render_image(counts, separation, pixels_per_site, blur_sigma, t,
                                   label=f"cycle_{k}"))
    return images


def write_pgm(image: OccupancyImage, path: Union[str, Path], maxval: int = 255) -> Path:
    """Plain-text (P2) grayscale image scaled to the frame maximum."""
    path = Path(path)
    peak = image.pixels.max()
    scaled = np.zeros(image.pixels.shape, dtype=np.int64) if peak <= 0 else \
        np.rint(image.pixels / peak * maxval).astype(np.int64)
    height, width = scaled.shape
    lines = ["P2", f"# {image.label} pixel pitch {image.pixel_pitch:.6e} m", f"{width} {height}", str(maxval)]
    lines += [" ".join(str(v) for v in row) for row in scaled]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_grid(counts: np.ndarray, path: Union[str, Path]) -> Path:
    """Occupancy histogram as comma-separated rows, one line per lattice row."""
    path = Path(path)
    path.write_text("\n".join(",".join(str(int(v)) for v in row) for row in counts) + "\n",
                    encoding="utf-8")
    return path
