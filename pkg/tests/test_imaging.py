"""Tests for synthetic occupancy images."""

import numpy as np
import pytest

from src.shiftreg.imaging import (
    render_image,
    render_register_images,
    subsample_counts,
    write_grid,
    write_pgm,
)

PITCH = 55e-6


def single_atom(col: int) -> np.ndarray:
    counts = np.zeros((5, 5), dtype=np.int64)
    counts[2, col] = 1
    return counts


class TestRenderImage:
    """Tests for image rendering."""

    def test_no_blur_is_histogram(self):
        counts = np.arange(25).reshape(5, 5)
        image = render_image(counts, PITCH)
        assert np.array_equal(image.pixels, counts)
        assert image.pixel_pitch == PITCH

    def test_empty_register(self):
        image = render_image(np.zeros((5, 5), dtype=np.int64), PITCH, pixels_per_site=4, blur_sigma=1.5e-6)
        assert image.total == 0.0
        assert np.all(np.isnan(image.centroid()))

    def test_blur_preserves_counts(self):
        image = render_image(single_atom(2) * 7, PITCH, pixels_per_site=4, blur_sigma=1.5e-6)
        assert image.total == pytest.approx(7.0)

    def test_centroid_moves_one_site(self):
        first = render_image(single_atom(1), PITCH, pixels_per_site=4, blur_sigma=1.5e-6)
        second = render_image(single_atom(2), PITCH, pixels_per_site=4, blur_sigma=1.5e-6)
        shift = second.centroid() - first.centroid()
        assert shift[0] == pytest.approx(PITCH)
        assert shift[1] == pytest.approx(0.0, abs=1e-12)

    def test_pixels_per_site_validated(self):
        with pytest.raises(ValueError):
            render_image(single_atom(0), PITCH, pixels_per_site=0)


class TestRegisterImages:
    """Tests for per-cycle frames."""

    def test_one_frame_per_checkpoint(self):
        movie = [single_atom(k) * 10 for k in range(3)]
        images = render_register_images(movie, PITCH, times=[0.0, 17e-3, 34e-3])
        assert [image.label for image in images] == ["cycle_0", "cycle_1", "cycle_2"]
        assert images[2].time == pytest.approx(34e-3)

    def test_physical_atom_subsampling(self):
        counts = np.full((5, 5), 40, dtype=np.int64)
        images = render_register_images([counts], PITCH, physical_atoms=200, seed=1)
        assert images[0].counts.sum() == 200
        assert np.all(images[0].counts <= counts)

    def test_subsample_keeps_small_histograms(self):
        counts = single_atom(3) * 5
        assert np.array_equal(subsample_counts(counts, 50, np.random.default_rng(0)), counts)


class TestWriters:
    """Tests for PGM and grid output."""

    def test_pgm_header_and_scaling(self, temp_dir):
        image = render_image(single_atom(2) * 3, PITCH, pixels_per_site=2, label="cycle_0")
        path = write_pgm(image, temp_dir / "cycle_0.pgm")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "P2"
        assert lines[2] == "10 10"
        assert lines[3] == "255"
        values = [int(v) for line in lines[4:] for v in line.split()]
        assert max(values) == 255
        assert len(values) == 100

    def test_blank_pgm(self, temp_dir):
        image = render_image(np.zeros((2, 2)), PITCH)
        path = write_pgm(image, temp_dir / "blank.pgm")
        assert path.read_text(encoding="utf-8").splitlines()[4:] == ["0 0", "0 0"]

    def test_grid_rows(self, temp_dir):
        counts = np.array([[0, 1], [2, 3]])
        path = write_grid(counts, temp_dir / "grid.csv")
        assert path.read_text(encoding="utf-8") == "0,1\n2,3\n"
