"""Tests for sequence compilation and the mirror model."""

import math

import numpy as np
import pytest

from src.shiftreg.control import (
    HandoverDirection,
    MirrorModel,
    Phase,
    RampShape,
    ShiftSequenceSpec,
    append_hold,
    compile_cycle,
    export_waveform,
    handover_waveform,
    import_waveform,
    mirror_response,
    mirror_trajectory,
    ramp,
    settling_offsets,
    static_hold,
    transport_only,
)
from src.shiftreg.errors import CapacityError, CoverageError, PhysicsError


class TestRamp:
    """Tests for ramp shapes."""

    @pytest.mark.parametrize("shape", list(RampShape))
    def test_endpoints(self, shape):
        assert ramp(shape, 0.0) == 0.0
        assert ramp(shape, 1.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("shape", list(RampShape))
    def test_monotone(self, shape):
        values = ramp(shape, np.linspace(0, 1, 101))
        assert np.all(np.diff(values) >= 0)

    def test_minimum_jerk_midpoint_and_flat_ends(self):
        assert ramp("minimum_jerk", 0.5) == pytest.approx(0.5)
        h = 1e-4
        assert ramp("minimum_jerk", h) / h < 1e-6

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ramp(RampShape.LINEAR, 1.5)


class TestCompileCycle:
    """Tests for shift-cycle compilation."""

    def test_duration_and_layout(self):
        spec = ShiftSequenceSpec(cycle_count=2, load_duration=1e-3)
        waveform = compile_cycle(spec)
        assert waveform.duration == pytest.approx(1e-3 + 2 * 17e-3)
        phases = [s.phase for s in waveform.segments]
        assert phases[:5] == [Phase.LOAD, Phase.TRANSPORT, Phase.HANDOVER_12, Phase.RETURN,
                              Phase.HANDOVER_21]
        assert waveform.net_displacement_sites == 2

    def test_at_least_one_array_lit(self):
        waveform = compile_cycle(ShiftSequenceSpec(cycle_count=3))
        times = np.linspace(0, waveform.duration, 5001)
        s1, s2, _ = waveform.evaluate(times)
        assert np.allclose(s1 + s2, 1.0)
        assert np.all((s1 >= 0) & (s1 <= 1) & (s2 >= 0) & (s2 <= 1))

    def test_tilt_profile(self):
        spec = ShiftSequenceSpec(cycle_count=1)
        waveform = compile_cycle(spec)
        _, _, tilt = waveform.evaluate([0.0, 2e-3, 7e-3, 12e-3, 17e-3])
        assert tilt == pytest.approx([0.0, 0.125, 0.125, 0.0, 0.0])

    def test_symmetric_tilt_endpoints(self):
        spec = ShiftSequenceSpec(symmetric_handover=True)
        assert spec.tilt_endpoints() == (-0.0625, 0.0625)
        assert spec.a2_tilt == -0.0625

    def test_channels_during_handover(self):
        waveform = compile_cycle(ShiftSequenceSpec(cycle_count=1))
        s1, s2, _ = waveform.evaluate([4.5e-3, 9.5e-3])
        assert s1[0] == pytest.approx(0.5)
        assert s2[0] == pytest.approx(0.5)
        assert (s1[1], s2[1]) == (0.0, 1.0)

    def test_zero_cycles(self):
        waveform = compile_cycle(ShiftSequenceSpec(cycle_count=0, load_duration=1e-3))
        assert waveform.duration == pytest.approx(1e-3)
        assert waveform.phase_at(0.5e-3) is Phase.LOAD

    def test_capacity(self):
        with pytest.raises(CapacityError):
            compile_cycle(ShiftSequenceSpec(cycle_count=6, usable_rows=5))

    def test_invalid_duration(self):
        with pytest.raises(PhysicsError, match="transport_duration"):
            compile_cycle(ShiftSequenceSpec(transport_duration=0.0))

    def test_outside_span(self):
        waveform = compile_cycle(ShiftSequenceSpec())
        with pytest.raises(CoverageError):
            waveform.evaluate(waveform.duration + 1e-3)

    def test_phase_spans(self):
        waveform = compile_cycle(ShiftSequenceSpec(cycle_count=2))
        spans = waveform.phase_spans(Phase.RETURN)
        assert len(spans) == 2
        assert spans[1][0] - spans[0][0] == pytest.approx(17e-3)


class TestScenarioWaveforms:
    """Tests for transport, hold and handover waveforms."""

    def test_transport_only(self):
        waveform = transport_only(1e-3, ShiftSequenceSpec(), hold=0.5e-3)
        assert waveform.duration == pytest.approx(1.5e-3)
        s1, s2, tilt = waveform.evaluate([0.5e-3, 1.5e-3])
        assert tilt[1] == pytest.approx(0.125)
        assert np.all(s1 == 1.0) and np.all(s2 == 0.0)

    def test_transport_needs_positive_duration(self):
        with pytest.raises(PhysicsError):
            transport_only(0.0, ShiftSequenceSpec())

    def test_static_hold(self):
        s1, s2, tilt = static_hold(1e-3, 0.01).evaluate([0.0, 1e-3])
        assert np.all(s1 == 1.0) and np.all(tilt == 0.01)

    def test_handover_a1_to_a2(self):
        spec = ShiftSequenceSpec()
        waveform = handover_waveform(HandoverDirection.A1_TO_A2, spec, settle=1e-3)
        s1, s2, tilt = waveform.evaluate([0.0, spec.handover_duration, waveform.duration])
        assert s1 == pytest.approx([1.0, 0.0, 0.0])
        assert s2 == pytest.approx([0.0, 1.0, 1.0])
        assert np.all(tilt == spec.pitch_tilt)

    def test_handover_a2_to_a1(self):
        spec = ShiftSequenceSpec()
        waveform = handover_waveform("A2->A1", spec, settle=1e-3)
        s1, s2, tilt = waveform.evaluate([0.0, waveform.duration])
        assert s1 == pytest.approx([0.0, 1.0])
        assert np.all(tilt == 0.0)

    def test_append_hold(self):
        waveform = append_hold(transport_only(1e-3, ShiftSequenceSpec()), 2e-3)
        assert waveform.duration == pytest.approx(3e-3)
        assert waveform.evaluate(3e-3)[2][0] == pytest.approx(0.125)


class TestMirror:
    """Tests for the second-order mirror response."""

    def test_step_overshoot(self):
        zeta = 0.3
        model = MirrorModel(natural_frequency=2 * math.pi * 17e3, damping_ratio=zeta)
        times = np.linspace(0.0, 1e-3, 20001)
        command = np.ones_like(times)
        command[0] = 0.0
        angle, _ = mirror_trajectory(model, times, command)
        expected = 1 + math.exp(-math.pi * zeta / math.sqrt(1 - zeta**2))
        assert angle.max() == pytest.approx(expected, rel=0.01)
        assert angle[-1] == pytest.approx(1.0, abs=1e-3)

    def test_starts_at_rest_on_command(self):
        times = np.linspace(0.0, 1e-4, 11)
        angle, rate = mirror_trajectory(MirrorModel(), times, np.full(11, 0.05))
        assert np.allclose(angle, 0.05)
        assert np.allclose(rate, 0.0, atol=1e-9)

    def test_tracking_after_minimum_jerk_move(self):
        spec = ShiftSequenceSpec()
        waveform = transport_only(2e-3, spec, hold=2e-3)
        times = np.linspace(0.0, waveform.duration, 40001)
        command = waveform.evaluate(times)[2]
        angle = mirror_response(MirrorModel(), times, command)
        settled = times >= 2e-3
        # incidence angle to cell-plane displacement: f·θ / demagnification
        error = np.abs(angle - command)[settled] * 1e-3 / (125 / 55)
        assert error.max() < 0.1e-6

    def test_rejects_non_finite_command(self):
        times = np.linspace(0.0, 1e-4, 5)
        with pytest.raises(PhysicsError):
            mirror_trajectory(MirrorModel(), times, np.array([0, 1, np.nan, 1, 1.0]))

    def test_invalid_damping(self):
        with pytest.raises(PhysicsError):
            MirrorModel(damping_ratio=0.0)

    def test_settling_offsets_held_after_move(self):
        model = MirrorModel(angle_noise_sigma=22e-6)
        waveform = transport_only(1e-3, ShiftSequenceSpec(), hold=1e-3)
        times = np.linspace(0.0, waveform.duration, 201)
        offsets = settling_offsets(waveform, times, model, np.random.default_rng(4))
        assert offsets[0] == 0.0
        assert np.all(offsets[times >= 1e-3] == offsets[-1])
        again = settling_offsets(waveform, times, model, np.random.default_rng(4))
        assert np.array_equal(offsets, again)

    def test_noiseless_mirror_has_no_offsets(self):
        model = MirrorModel(angle_noise_sigma=0.0)
        waveform = transport_only(1e-3, ShiftSequenceSpec())
        times = np.linspace(0.0, waveform.duration, 11)
        assert not settling_offsets(waveform, times, model, np.random.default_rng(0)).any()


class TestWaveformCsv:
    """Tests for waveform export and import."""

    def test_bit_exact_round_trip(self, temp_dir):
        samples = compile_cycle(ShiftSequenceSpec()).sample(20e3)
        path = export_waveform(samples, temp_dir / "waveform.csv")
        data = import_waveform(path)
        assert np.array_equal(data["t"], samples.times)
        assert np.array_equal(data["tilt_cmd"], samples.commanded_tilt)
        assert np.array_equal(data["tilt_actual"], samples.commanded_tilt)

    def test_wrong_header(self, temp_dir):
        path = temp_dir / "bad.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="expected columns"):
            import_waveform(path)
