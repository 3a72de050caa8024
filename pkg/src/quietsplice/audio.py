"""Waveform container, WAV I/O, STFT/ISTFT and log-mel features.

Every stage of the toolkit passes audio around as :class:`Waveform`.
Spectral work uses a periodic Hann window; frames that run past the end
of the signal are zero-padded, so the frame count is
``1 + ceil((len - frame_length) / hop)``.
"""
from __future__ import annotations

import math
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    InvalidBandRange,
    InvalidHop,
    SignalTooShort,
    UnsupportedFormat,
)

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_LENGTH = 1024
DEFAULT_HOP_LENGTH = 256
DEFAULT_MEL_BANDS = 80
DEFAULT_FMIN = 0.0
DEFAULT_FMAX = 8000.0
LOG_FLOOR = 1e-10
# Fixed-point grid on which sums/differences of audio-range samples are
# exact in float64 (see separation.complement).
SAMPLE_GRID = 2.0 ** -48

_PCM16_SCALE = 2.0 ** 15
_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


def snap(samples) -> np.ndarray:
    """Round to the nearest multiple of SAMPLE_GRID."""
    return np.round(np.asarray(samples, dtype=np.float64) / SAMPLE_GRID) * SAMPLE_GRID


def _frozen(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal. ``samples`` is copied and made read-only."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def replace(self, samples) -> "Waveform":
        """New waveform with the same sample rate."""
        return Waveform(samples, self.sample_rate)

    @classmethod
    def zeros(cls, n: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> "Waveform":
        return cls(np.zeros(n), sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (frames, bins)
    phase: np.ndarray  # (frames, bins)
    frame_length: int
    hop_length: int
    sample_rate: int
    num_samples: int  # length of the analysed signal before tail padding

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        phase = np.asarray(self.phase, dtype=np.float64)
        if mags.shape != phase.shape or mags.ndim != 2:
            raise ValueError("magnitudes and phase must be matching 2-D arrays")
        if mags.shape[1] != self.frame_length // 2 + 1:
            raise ValueError("bins must equal frame_length/2 + 1")
        if np.any(mags < 0):
            raise ValueError("magnitudes must be non-negative")
        object.__setattr__(self, "magnitudes", _frozen(mags))
        object.__setattr__(self, "phase", _frozen(phase))

    @property
    def num_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def num_bins(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate / self.frame_length

    def complex(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phase)

    def with_magnitudes(self, magnitudes) -> "Spectrogram":
        return Spectrogram(magnitudes, self.phase, self.frame_length,
                           self.hop_length, self.sample_rate, self.num_samples)


@dataclass(frozen=True)
class MelSpectrogram:
    log_energies: np.ndarray  # (frames, mel_bands)
    fmin: float
    fmax: float
    sample_rate: int
    hop_length: int
    mel_bands: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "log_energies", _frozen(self.log_energies))
        object.__setattr__(self, "mel_bands", self.log_energies.shape[1])


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader("not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"data" and len(body) < size:
            raise CorruptHeader("data chunk truncated")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def read_wav(path) -> Waveform:
    """Read a PCM16, float32 or float64 WAV file, averaging channels to mono."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    data = path.read_bytes()
    chunks = _read_chunks(data)
    fmt = chunks.get(b"fmt ")
    if fmt is None or len(fmt) < 16:
        raise CorruptHeader("missing or short fmt chunk")
    if b"data" not in chunks:
        raise CorruptHeader("missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise CorruptHeader("short extensible fmt chunk")
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels < 1 or rate < 1:
        raise CorruptHeader("invalid channel count or sample rate")
    if tag == _FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), _PCM16_SCALE
    elif tag == _FORMAT_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    elif tag == _FORMAT_FLOAT and bits == 64:
        dtype, scale = np.dtype("<f8"), 1.0
    else:
        raise UnsupportedFormat(f"format tag {tag} with {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise CorruptHeader("block alignment disagrees with format")
    raw = chunks[b"data"]
    usable = len(raw) - len(raw) % block_align
    frames = np.frombuffer(raw[:usable], dtype=dtype).reshape(-1, channels)
    samples = frames.astype(np.float64) / scale
    if not np.all(np.isfinite(samples)):
        raise CorruptHeader("non-finite sample values")
    return Waveform(samples.mean(axis=1), rate)


def write_wav(w: Waveform, path, encoding: str = "pcm16") -> None:
    """Write mono WAV. The file appears atomically (temp file then rename).

    ``float64`` is lossless and is what the pipeline uses for intermediate
    artifacts.
    """
    if encoding == "pcm16":
        q = np.clip(np.round(w.samples * _PCM16_SCALE), -32768, 32767)
        payload = q.astype("<i2").tobytes()
        tag, bits = _FORMAT_PCM, 16
    elif encoding == "float32":
        payload = w.samples.astype("<f4").tobytes()
        tag, bits = _FORMAT_FLOAT, 32
    elif encoding == "float64":
        payload = w.samples.astype("<f8").tobytes()
        tag, bits = _FORMAT_FLOAT, 64
    else:
        raise UnsupportedFormat(f"unknown encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, w.sample_rate,
                      w.sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    try:
        tmp.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------

def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def num_frames(n_samples: int, frame_length: int, hop_length: int) -> int:
    if n_samples < frame_length:
        raise SignalTooShort(
            f"{n_samples} samples is shorter than one frame ({frame_length})")
    return 1 + math.ceil((n_samples - frame_length) / hop_length)


def frame_signal(x: np.ndarray, frame_length: int, hop_length: int) -> np.ndarray:
    """Split into (frames, frame_length), zero-padding the last partial frame."""
    n = num_frames(len(x), frame_length, hop_length)
    padded = np.zeros(frame_length + (n - 1) * hop_length)
    padded[:len(x)] = x
    idx = np.arange(frame_length)[None, :] + hop_length * np.arange(n)[:, None]
    return padded[idx]


def overlap_add(frames: np.ndarray, hop_length: int, window: np.ndarray,
                length: int, floor: float = 0.1) -> np.ndarray:
    """Weighted overlap-add: sum(w * frame) / sum(w^2), cropped to ``length``.

    The denominator is clamped at ``floor`` times its peak value, which
    only matters in the first and last partial frame, where the window sum
    tapers to zero and the exact inverse would blow up rounding noise.
    """
    n, frame_length = frames.shape
    total = frame_length + (n - 1) * hop_length
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = window ** 2
    for i in range(n):
        sl = slice(i * hop_length, i * hop_length + frame_length)
        out[sl] += window * frames[i]
        norm[sl] += w2
    return out[:length] / np.maximum(norm, floor * norm.max())[:length]


def _check_geometry(frame_length: int, hop_length: int) -> None:
    if frame_length < 2 or frame_length & (frame_length - 1):
        raise ValueError("frame_length must be a power of two")
    if not 0 < hop_length <= frame_length:
        raise InvalidHop("hop_length must be in (0, frame_length]")


def stft(w: Waveform, frame_length: int = DEFAULT_FRAME_LENGTH,
         hop_length: int = DEFAULT_HOP_LENGTH, window: str = "hann") -> Spectrogram:
    if window != "hann":
        raise ValueError(f"unsupported window {window!r}")
    _check_geometry(frame_length, hop_length)
    frames = frame_signal(w.samples, frame_length, hop_length) * hann(frame_length)
    spec = np.fft.rfft(frames, axis=1)
    return Spectrogram(np.abs(spec), np.angle(spec), frame_length, hop_length,
                       w.sample_rate, len(w))


def istft(s: Spectrogram) -> Waveform:
    """Least-squares overlap-add inverse of :func:`stft`.

    Exact away from the signal edges; within the first and last ~0.2 frame
    the output is attenuated (see :func:`overlap_add`).
    """
    if s.frame_length % s.hop_length or s.frame_length // s.hop_length < 2:
        raise InvalidHop(
            f"hop {s.hop_length} does not overlap-add for frame {s.frame_length}")
    frames = np.fft.irfft(s.complex(), n=s.frame_length, axis=1)
    y = overlap_add(frames, s.hop_length, hann(s.frame_length), s.num_samples)
    return Waveform(y, s.sample_rate)


def resynthesize(w: Waveform, spec: Spectrogram, magnitudes) -> Waveform:
    """Apply new STFT magnitudes (with the original phase) to ``w``.

    Computed as ``w + istft(change)``, so unchanged bins leave ``w`` bit-exact
    and the edge taper of :func:`istft` only touches the change itself.
    """
    delta = (np.asarray(magnitudes) - spec.magnitudes) * np.exp(1j * spec.phase)
    frames = np.fft.irfft(delta, n=spec.frame_length, axis=1)
    change = overlap_add(frames, spec.hop_length, hann(spec.frame_length), len(w))
    return w.replace(w.samples + change)


# ---------------------------------------------------------------------------
# Mel features
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def check_band_range(mel_bands: int, fmin: float, fmax: float, sample_rate: int):
    if mel_bands < 1 or fmin < 0 or not fmin < fmax or fmax > sample_rate / 2:
        raise InvalidBandRange(
            f"bands={mel_bands}, fmin={fmin}, fmax={fmax}, sr={sample_rate}")


def mel_filterbank(mel_bands: int, frame_length: int, sample_rate: int,
                   fmin: float = DEFAULT_FMIN, fmax: float = DEFAULT_FMAX) -> np.ndarray:
    """Unnormalised triangular filters with unit peaks, shape (mel_bands, bins)."""
    check_band_range(mel_bands, fmin, fmax, sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), mel_bands + 2))
    freqs = np.arange(frame_length // 2 + 1) * sample_rate / frame_length
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def mel_spectrogram(s: Spectrogram, mel_bands: int = DEFAULT_MEL_BANDS,
                    fmin: float = DEFAULT_FMIN, fmax: float = DEFAULT_FMAX) -> MelSpectrogram:
    fb = mel_filterbank(mel_bands, s.frame_length, s.sample_rate, fmin, fmax)
    energies = (s.magnitudes ** 2) @ fb.T
    return MelSpectrogram(np.log(np.maximum(energies, LOG_FLOOR)), fmin, fmax,
                          s.sample_rate, s.hop_length)


def log_mel(w: Waveform, frame_length: int = DEFAULT_FRAME_LENGTH,
            hop_length: int = DEFAULT_HOP_LENGTH, mel_bands: int = DEFAULT_MEL_BANDS,
            fmin: float = DEFAULT_FMIN, fmax: float | None = None) -> np.ndarray:
    """Shortcut: (frames, mel_bands) log-mel matrix of a waveform."""
    fmax = w.sample_rate / 2 if fmax is None else fmax
    return mel_spectrogram(stft(w, frame_length, hop_length), mel_bands, fmin,
                           fmax).log_energies


# ---------------------------------------------------------------------------
# Matrix export
# ---------------------------------------------------------------------------

def write_matrix(path, matrix, sample_rate: int, hop_length: int) -> None:
    """Plain-text matrix: header ``rows cols sample_rate hop`` then rows."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lines = [f"{m.shape[0]} {m.shape[1]} {sample_rate} {hop_length}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> tuple[np.ndarray, int, int]:
    """Inverse of :func:`write_matrix`; returns (matrix, sample_rate, hop)."""
    text = Path(path).read_text().split("\n", 1)
    rows, cols, sr, hop = (int(v) for v in text[0].split())
    values = np.array(text[1].split(), dtype=np.float64) if len(text) > 1 else np.zeros(0)
    if values.size != rows * cols:
        raise CorruptHeader(f"expected {rows * cols} values, found {values.size}")
    return values.reshape(rows, cols), sr, hop
