import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quietsplice.audio import (
    LOG_FLOOR,
    SAMPLE_GRID,
    Waveform,
    hann,
    istft,
    mel_filterbank,
    mel_spectrogram,
    num_frames,
    read_matrix,
    read_wav,
    resynthesize,
    snap,
    stft,
    write_matrix,
    write_wav,
)
from quietsplice.errors import (
    CorruptHeader,
    InvalidBandRange,
    InvalidHop,
    SignalTooShort,
    UnsupportedFormat,
)

from conftest import SR, tone


def _raw_wav(path, tag, channels, bits, payload, rate=SR):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


class TestWaveform:
    def test_samples_are_read_only_copies(self):
        src = np.array([0.1, 0.2])
        w = Waveform(src)
        src[0] = 9.0
        assert w.samples[0] == 0.1
        with pytest.raises(ValueError):
            w.samples[0] = 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Waveform(np.array([0.0, np.nan]))

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(3), 0)

    def test_duration(self):
        assert Waveform.zeros(8000).duration == 0.5


class TestWavIO:
    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        _raw_wav(path, 1, 1, 16, np.array([0, 16384, -16384], "<i2").tobytes())
        assert read_wav(path).samples.tolist() == [0.0, 0.5, -0.5]

    def test_stereo_is_averaged(self, tmp_path):
        path = tmp_path / "s.wav"
        _raw_wav(path, 3, 2, 32, np.array([1.0, 0.0], "<f4").tobytes())
        assert read_wav(path).samples.tolist() == [0.5]

    def test_pcm16_roundtrip_within_lsb(self, tmp_path, rng):
        w = Waveform(rng.uniform(-0.9, 0.9, 500))
        write_wav(w, tmp_path / "r.wav", "pcm16")
        back = read_wav(tmp_path / "r.wav")
        assert np.max(np.abs(back.samples - w.samples)) <= 1 / 2 ** 15

    def test_float32_roundtrip_bit_identical(self, tmp_path, rng):
        w = Waveform(rng.standard_normal(300).astype(np.float32).astype(np.float64))
        write_wav(w, tmp_path / "f.wav", "float32")
        assert np.array_equal(read_wav(tmp_path / "f.wav").samples, w.samples)

    def test_float64_roundtrip_bit_identical(self, tmp_path, rng):
        w = Waveform(rng.standard_normal(301))
        write_wav(w, tmp_path / "d.wav", "float64")
        assert np.array_equal(read_wav(tmp_path / "d.wav").samples, w.samples)

    def test_empty_waveform(self, tmp_path):
        write_wav(Waveform(np.zeros(0)), tmp_path / "e.wav")
        assert len(read_wav(tmp_path / "e.wav")) == 0

    def test_pcm16_saturation(self, tmp_path):
        write_wav(Waveform(np.array([2.0, -2.0])), tmp_path / "c.wav", "pcm16")
        assert read_wav(tmp_path / "c.wav").samples.tolist() == [1 - 1 / 2 ** 15, -1.0]

    def test_sample_rate_preserved(self, tmp_path):
        write_wav(Waveform(np.zeros(4), 22050), tmp_path / "r.wav")
        assert read_wav(tmp_path / "r.wav").sample_rate == 22050

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "u.wav"
        _raw_wav(path, 1, 1, 24, b"\x00" * 6)
        with pytest.raises(UnsupportedFormat):
            read_wav(path)

    @pytest.mark.parametrize("payload", [b"", b"RIFF", b"RIFF\x10\x00\x00\x00WAVEjunk",
                                         b"not a wav file at all"])
    def test_corrupt_header(self, tmp_path, payload):
        path = tmp_path / "bad.wav"
        path.write_bytes(payload)
        with pytest.raises(CorruptHeader):
            read_wav(path)

    def test_unknown_encoding(self, tmp_path):
        with pytest.raises(UnsupportedFormat):
            write_wav(Waveform(np.zeros(2)), tmp_path / "x.wav", "mp3")

    def test_no_temp_file_left(self, tmp_path):
        write_wav(Waveform(np.zeros(10)), tmp_path / "t.wav")
        assert [p.name for p in tmp_path.iterdir()] == ["t.wav"]

    @given(st.binary(max_size=200))
    def test_arbitrary_bytes_never_crash_uncontrolled(self, data):
        import tempfile
        from pathlib import Path
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "fuzz.wav"
            path.write_bytes(b"RIFF" + struct.pack("<I", len(data) + 4) + b"WAVE" + data)
            try:
                read_wav(path)
            except (CorruptHeader, UnsupportedFormat):
                pass


class TestStft:
    def test_frame_count_aligned(self):
        # 1 + (len - N)/hop when the tail lines up with the hop
        assert stft(Waveform(np.zeros(1024 + 10 * 256))).num_frames == 11

    def test_frame_count_pads_tail(self):
        assert num_frames(1024 + 257, 1024, 256) == 3

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            stft(Waveform(np.zeros(100)))

    def test_zero_signal(self):
        assert not stft(Waveform(np.zeros(4096))).magnitudes.any()

    def test_1khz_argmax_bin(self):
        s = stft(Waveform(tone(1000.0, 8192)))
        assert set(np.argmax(s.magnitudes[1:-1], axis=1)) == {64}

    def test_parseval(self, rng):
        x = rng.standard_normal(4096)
        s = stft(Waveform(x))
        frame = x[256:256 + 1024] * hann(1024)
        full = np.fft.fft(frame)
        # one-sided magnitudes: add the mirrored half back
        mags = s.magnitudes[1]
        energy = mags[0] ** 2 + mags[-1] ** 2 + 2 * np.sum(mags[1:-1] ** 2)
        assert energy == pytest.approx(1024 * np.sum(frame ** 2), rel=1e-6)
        assert energy == pytest.approx(np.sum(np.abs(full) ** 2), rel=1e-12)

    @given(st.integers(1100, 6000), st.integers(0, 2 ** 31 - 1))
    def test_roundtrip_interior(self, n, seed):
        x = np.random.default_rng(seed).standard_normal(n)
        y = istft(stft(Waveform(x), 1024, 256)).samples
        interior = slice(512, n - 512)
        assert np.sqrt(np.mean((y[interior] - x[interior]) ** 2)) < 1e-6
        assert len(y) == n

    def test_invalid_hop(self):
        with pytest.raises(InvalidHop):
            stft(Waveform(np.zeros(4096)), 1024, 0)
        s = stft(Waveform(np.zeros(4096)), 1024, 1024)
        with pytest.raises(InvalidHop):
            istft(s)

    def test_resynthesize_unchanged_is_exact(self, rng):
        w = Waveform(rng.standard_normal(5000))
        s = stft(w)
        assert np.array_equal(resynthesize(w, s, s.magnitudes).samples, w.samples)


class TestMel:
    def test_zero_floor(self):
        mel = mel_spectrogram(stft(Waveform(np.zeros(2048))), 80, 0, 8000)
        assert np.all(mel.log_energies == np.log(LOG_FLOOR))

    def test_single_bin_support(self):
        fb = mel_filterbank(80, 1024, SR, 0, 8000)
        b = 100
        mags = np.zeros((1, 513))
        mags[0, b] = 1.0
        from quietsplice.audio import Spectrogram
        s = Spectrogram(mags, np.zeros_like(mags), 1024, 256, SR, 1024)
        mel = mel_spectrogram(s, 80, 0, 8000).log_energies[0]
        assert np.array_equal(mel > np.log(LOG_FLOOR), fb[:, b] > 0)

    def test_flat_spectrum_gives_triangle_areas(self):
        fb = mel_filterbank(40, 1024, SR, 0, 8000)
        from quietsplice.audio import Spectrogram
        mags = np.ones((1, 513))
        s = Spectrogram(mags, np.zeros_like(mags), 1024, 256, SR, 1024)
        energies = np.exp(mel_spectrogram(s, 40, 0, 8000).log_energies[0])
        np.testing.assert_allclose(energies, fb.sum(axis=1), rtol=1e-12)

    @pytest.mark.parametrize("bands,fmin,fmax", [(0, 0, 8000), (80, 500, 400),
                                                  (80, 0, 9000), (80, -1, 8000)])
    def test_bad_band_range(self, bands, fmin, fmax):
        with pytest.raises(InvalidBandRange):
            mel_filterbank(bands, 1024, SR, fmin, fmax)


class TestGridAndMatrix:
    @given(st.floats(-4, 4, allow_nan=False))
    def test_snap_is_on_grid(self, v):
        s = snap(np.array([v]))[0]
        assert s / SAMPLE_GRID == round(s / SAMPLE_GRID)
        assert abs(s - v) <= SAMPLE_GRID / 2

    def test_matrix_roundtrip(self, tmp_path, rng):
        m = rng.standard_normal((3, 5))
        write_matrix(tmp_path / "m.txt", m, SR, 256)
        back, sr, hop = read_matrix(tmp_path / "m.txt")
        assert np.array_equal(back, m) and (sr, hop) == (SR, 256)

    def test_matrix_corrupt(self, tmp_path):
        (tmp_path / "m.txt").write_text("2 2 16000 256\n1 2 3\n")
        with pytest.raises(CorruptHeader):
            read_matrix(tmp_path / "m.txt")
