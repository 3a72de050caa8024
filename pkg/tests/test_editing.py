import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quietsplice.audio import Waveform
from quietsplice.editing import (
    EditorSpec,
    EditScript,
    apply_edit,
    crossfade_splice,
    expected_length,
    fade_curves,
    fade_samples,
)
from quietsplice.errors import (
    BackendFailure,
    FadeTooLong,
    InvalidSpec,
    MissingReplacement,
    RegionOutOfBounds,
    SampleRateMismatch,
)

SPLICE0 = EditorSpec("splice", {"crossfade_ms": 0})
SPLICE10 = EditorSpec()
F10 = fade_samples(10, 16000)


def signal(n, seed=0):
    return Waveform(np.random.default_rng(seed).standard_normal(n))


class TestScript:
    def test_unknown_operation(self):
        with pytest.raises(ValueError):
            EditScript(0, 1, "swap")

    def test_negative_indices(self):
        with pytest.raises(RegionOutOfBounds):
            EditScript(-1, 1, "deletion")

    def test_region_past_end(self):
        with pytest.raises(RegionOutOfBounds):
            apply_edit(signal(100), EditScript(90, 20, "deletion"))

    def test_insertion_past_end(self):
        with pytest.raises(RegionOutOfBounds):
            apply_edit(signal(100), EditScript(101, 0, "insertion", signal(10)))

    def test_missing_replacement(self):
        with pytest.raises(MissingReplacement):
            apply_edit(signal(100), EditScript(10, 5, "replacement"))

    def test_external_needs_transcript(self):
        spec = EditorSpec("external", {"command": "true"})
        with pytest.raises(MissingReplacement):
            apply_edit(signal(100), EditScript(10, 5, "insertion"), spec)

    def test_editor_spec_validation(self):
        with pytest.raises(InvalidSpec):
            EditorSpec("vocoder")
        with pytest.raises(InvalidSpec):
            EditorSpec("external")


class TestSplice:
    def test_replace_region_by_itself(self):
        x = signal(1000)
        script = EditScript(200, 300, "replacement", x.replace(x.samples[200:500]))
        assert np.array_equal(apply_edit(x, script, SPLICE0).samples, x.samples)

    def test_zero_length_deletion_is_noop(self):
        x = signal(1000)
        assert apply_edit(x, EditScript(500, 0, "deletion"), SPLICE10) is x

    def test_deletion_length(self):
        x = signal(1000)
        assert len(apply_edit(x, EditScript(100, 51, "deletion"), SPLICE0)) == 1000 - 51

    def test_insertion_half_second(self):
        x = signal(32000)
        material = signal(8000, 1)
        out = apply_edit(x, EditScript(16000, 0, "insertion", material), SPLICE0)
        assert len(out) == 32000 + 8000
        faded = apply_edit(x, EditScript(16000, 0, "insertion", material), SPLICE10)
        assert len(faded) == 32000 + 8000 - 2 * F10
        assert np.array_equal(faded.samples[:16000 - F10], x.samples[:16000 - F10])

    def test_constant_signal_stays_constant(self):
        one = Waveform(np.ones(2000))
        out = crossfade_splice(one, one, one, 10)
        np.testing.assert_allclose(out.samples, 1.0, atol=1e-6)

    def test_fade_curves_sum_to_one(self):
        out_ramp, in_ramp = fade_curves(160)
        np.testing.assert_allclose(out_ramp + in_ramp, 1.0, atol=1e-15)
        assert np.all(np.diff(in_ramp) > 0)

    def test_zero_fade_is_concatenation(self):
        a, b, c = signal(10), signal(5, 1), signal(7, 2)
        out = crossfade_splice(a, b, c, 0)
        assert np.array_equal(out.samples, np.concatenate([a.samples, b.samples, c.samples]))

    def test_empty_insert_single_crossfade(self):
        a, c = signal(400), signal(400, 1)
        out = crossfade_splice(a, a.replace(np.zeros(0)), c, 10)
        assert len(out) == 800 - F10

    def test_fade_too_long(self):
        with pytest.raises(FadeTooLong):
            crossfade_splice(signal(400), signal(50, 1), signal(400, 2), 10)

    def test_rate_mismatch(self):
        with pytest.raises(SampleRateMismatch):
            crossfade_splice(signal(400), Waveform(np.zeros(400), 8000), signal(400), 10)

    def test_out_of_region_preserved(self):
        x = signal(4000)
        material = signal(900, 3)
        m, k = 1500, 600
        out = apply_edit(x, EditScript(m, k, "replacement", material), SPLICE10).samples
        assert np.array_equal(out[:m - F10], x.samples[:m - F10])
        shift = len(material) - k - 2 * F10
        tail_start = m + k + F10
        assert np.array_equal(out[tail_start + shift:], x.samples[tail_start:])

    @given(st.integers(0, 2000), st.integers(0, 2000), st.integers(0, 1500),
           st.sampled_from(["insertion", "replacement", "deletion"]),
           st.sampled_from([0.0, 5.0, 10.0]))
    def test_length_law(self, m, k, material_len, op, fade_ms):
        n = 3000
        k = 0 if op == "insertion" else min(k, n - min(m, n))
        m = min(m, n)
        material = signal(material_len, 5) if op != "deletion" else None
        script = EditScript(m, k, op, material)
        fade = fade_samples(fade_ms, 16000)
        try:
            out = apply_edit(signal(n), script, EditorSpec("splice", {"crossfade_ms": fade_ms}))
        except FadeTooLong:
            return
        assert len(out) == expected_length(n, script, fade)


class TestExternalEditor:
    def test_command_receives_region(self, tmp_path):
        script_path = tmp_path / "edit.py"
        script_path.write_text(
            "import sys, struct, shutil\n"
            "assert sys.argv[3] == '10' and sys.argv[4] == '5' and sys.argv[5] == 'new words'\n"
            "shutil.copy(sys.argv[1], sys.argv[2])\n")
        cmd = (f"{sys.executable} {script_path} {{input}} {{output}} {{region_start}} "
               f"{{region_len}} {{target_transcript}}")
        x = Waveform(np.linspace(-0.5, 0.5, 100).astype(np.float32).astype(np.float64))
        out = apply_edit(x, EditScript(10, 5, "replacement", target_transcript="new words"),
                         EditorSpec("external", {"command": cmd}))
        assert np.array_equal(out.samples, x.samples)

    def test_failure(self, tmp_path):
        spec = EditorSpec("external", {"command": f"{sys.executable} -c 'import sys; sys.exit(1)'"})
        with pytest.raises(BackendFailure):
            apply_edit(signal(100), EditScript(10, 5, "deletion"), spec)
