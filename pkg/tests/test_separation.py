import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from quietsplice.analysis import snr_db
from quietsplice.audio import Waveform, write_wav
from quietsplice.errors import BackendFailure, InvalidSpec, ReferenceMismatch
from quietsplice.fixtures import make_fixture
from quietsplice.separation import (
    SeparatorSpec,
    complement,
    separate,
    spectral_subtract,
)

from conftest import tone


def rayleigh_residual_ratio(percentile, alpha, floor=0.05):
    """Expected output/input RMS for stationary white noise.

    STFT magnitudes of white noise are Rayleigh distributed; with unit scale
    the per-bin percentile is q = sqrt(-2 ln(1 - p)). Subtraction keeps
    max(r - alpha q, floor r), whose second moment over the Rayleigh density
    gives the power ratio (phase is kept, so power maps to the waveform).
    """
    q = np.sqrt(-2 * np.log(1 - percentile / 100))
    pdf = lambda r: r * np.exp(-r * r / 2)
    kept = lambda r: max(r - alpha * q, floor * r) ** 2 * pdf(r)
    knee = alpha * q
    power = integrate.quad(kept, 0, knee)[0] + integrate.quad(kept, knee, np.inf)[0]
    return np.sqrt(power / 2.0)


def gated_tone(n, freq=1000.0, amp=0.5):
    """Tone in the middle 60% of the signal, silence around it."""
    x = np.zeros(n)
    a, b = int(0.2 * n), int(0.8 * n)
    x[a:b] = tone(freq, b - a, amp=amp)
    return x


class TestSpec:
    def test_unknown_kind(self):
        with pytest.raises(InvalidSpec):
            SeparatorSpec("storm")

    def test_oracle_needs_reference(self):
        with pytest.raises(InvalidSpec):
            SeparatorSpec("oracle")

    def test_external_needs_command(self):
        with pytest.raises(InvalidSpec):
            SeparatorSpec("external")

    def test_defaults(self):
        p = SeparatorSpec().parameters
        assert p["percentile"] == 20.0 and p["oversubtraction"] == 1.5


class TestOracle:
    def test_returns_clean_and_noise_exactly(self):
        fx = make_fixture(3)
        res = separate(fx.noisy, SeparatorSpec("oracle", {"reference": fx.clean}))
        assert np.array_equal(res.speech.samples, fx.clean.samples)
        assert np.array_equal(res.noise.samples, fx.noise.samples)

    def test_reference_from_file(self, tmp_path):
        fx = make_fixture(4, duration=0.5)
        write_wav(fx.clean, tmp_path / "c.wav", "float64")
        res = separate(fx.noisy, SeparatorSpec("oracle", {"reference": tmp_path / "c.wav"}))
        assert np.array_equal(res.speech.samples, fx.clean.samples)

    def test_length_mismatch(self):
        fx = make_fixture(5, duration=0.5)
        with pytest.raises(ReferenceMismatch):
            separate(fx.noisy, SeparatorSpec("oracle",
                                             {"reference": Waveform(np.zeros(10))}))


class TestComplement:
    # exact while speech and noise stay below 2**5 in magnitude, where the
    # 2**-48 grid fits in a double's 53-bit mantissa
    @given(st.integers(0, 10 ** 6), st.floats(0.01, 4.0))
    def test_exact_on_grid_inputs(self, seed, scale):
        r = np.random.default_rng(seed)
        x = Waveform(r.standard_normal(64).astype(np.float32).astype(np.float64))
        res = complement(x, r.standard_normal(64) * scale)
        assert np.array_equal(res.speech.samples + res.noise.samples, x.samples)

    def test_wrong_length(self):
        with pytest.raises(BackendFailure):
            complement(Waveform(np.zeros(4)), np.zeros(3))

    def test_spectral_subtraction_complement(self):
        fx = make_fixture(6, duration=0.5)
        res = separate(fx.noisy, SeparatorSpec())
        assert np.array_equal(res.speech.samples + res.noise.samples, fx.noisy.samples)


class TestSpectralSubtraction:
    def test_zero_in_zero_out(self):
        assert not spectral_subtract(Waveform.zeros(4000)).samples.any()

    def test_white_noise_matches_rayleigh_oracle(self, rng):
        x = Waveform(rng.standard_normal(64000))
        ratio = (np.sqrt(np.mean(spectral_subtract(x, 50, 1.5).samples ** 2))
                 / np.sqrt(np.mean(x.samples ** 2)))
        assert ratio == pytest.approx(rayleigh_residual_ratio(50, 1.5), rel=0.15)

    def test_gated_tone_preserved(self):
        x = gated_tone(32000)
        y = spectral_subtract(Waveform(x)).samples
        level = 20 * np.log10(np.sqrt(np.mean(y ** 2)) / np.sqrt(np.mean(x ** 2)))
        assert abs(level) < 1.0

    def test_tone_in_white_noise(self, rng):
        clean = gated_tone(32000)
        noise = rng.standard_normal(clean.size)
        noise *= np.sqrt(np.mean(clean ** 2) / np.mean(noise ** 2))
        res = separate(Waveform(clean + noise), SeparatorSpec())
        assert snr_db(res.speech, Waveform(clean)) >= 5.0

    @pytest.mark.parametrize("kwargs", [{"noise_floor_percentile": 0},
                                        {"oversubtraction": 0.5}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            spectral_subtract(Waveform.zeros(4000), **kwargs)


class TestExternal:
    def _script(self, tmp_path, body):
        path = tmp_path / "sep.py"
        path.write_text(body)
        return f"{sys.executable} {path} {{input}} {{speech_out}} {{noise_out}}"

    def test_roundtrip_through_command(self, tmp_path):
        cmd = self._script(tmp_path, (
            "import sys, shutil\n"
            "shutil.copy(sys.argv[1], sys.argv[2])\n"))
        x = Waveform(np.linspace(-0.5, 0.5, 2000).astype(np.float32).astype(np.float64))
        res = separate(x, SeparatorSpec("external", {"command": cmd}))
        assert np.array_equal(res.speech.samples, x.samples)
        assert not res.noise.samples.any()

    def test_nonzero_exit(self, tmp_path):
        cmd = self._script(tmp_path, "import sys\nsys.exit(3)\n")
        with pytest.raises(BackendFailure, match="exited with 3"):
            separate(Waveform.zeros(100), SeparatorSpec("external", {"command": cmd}))

    def test_timeout(self, tmp_path):
        cmd = self._script(tmp_path, "import time\ntime.sleep(5)\n")
        with pytest.raises(BackendFailure, match="timed out"):
            separate(Waveform.zeros(100),
                     SeparatorSpec("external", {"command": cmd, "timeout": 0.3}))

    def test_missing_output(self, tmp_path):
        cmd = self._script(tmp_path, "pass\n")
        with pytest.raises(BackendFailure):
            separate(Waveform.zeros(100), SeparatorSpec("external", {"command": cmd}))
