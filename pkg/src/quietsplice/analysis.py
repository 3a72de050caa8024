"""Objective metrics: spectral centroid/bandwidth, SNR, boundary discontinuity."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Spectrogram, Waveform, frame_signal, hann, log_mel, stft
from .errors import BoundaryOutOfRange, LengthMismatch, SampleRateMismatch

SILENCE_FLOOR = 1e-10
SNR_CAP_DB = 120.0
FLUX_FRAME = 512
FLUX_HOP = 128
DEFAULT_WINDOW_MS = 100.0


def _weights(s: Spectrogram):
    mags = s.magnitudes
    total = mags.sum(axis=1)
    voiced = total >= SILENCE_FLOOR
    return mags, total, voiced


def spectral_centroid(s: Spectrogram) -> np.ndarray:
    """Magnitude-weighted mean frequency per frame; silent frames give 0."""
    mags, total, voiced = _weights(s)
    out = np.zeros(s.num_frames)
    out[voiced] = mags[voiced] @ s.bin_frequencies / total[voiced]
    return out


def spectral_bandwidth(s: Spectrogram) -> np.ndarray:
    """Magnitude-weighted standard deviation of frequency about the centroid."""
    mags, total, voiced = _weights(s)
    centroid = spectral_centroid(s)
    dev = (s.bin_frequencies[None, :] - centroid[:, None]) ** 2
    out = np.zeros(s.num_frames)
    out[voiced] = np.sqrt(np.sum(dev[voiced] * mags[voiced], axis=1) / total[voiced])
    return out


@dataclass
class SpectralStats:
    centroid: np.ndarray
    bandwidth: np.ndarray
    centroid_mean: float
    bandwidth_mean: float

    @classmethod
    def of(cls, s: Spectrogram) -> "SpectralStats":
        c, b = spectral_centroid(s), spectral_bandwidth(s)
        voiced = _weights(s)[2]
        if voiced.any():
            return cls(c, b, float(c[voiced].mean()), float(b[voiced].mean()))
        return cls(c, b, 0.0, 0.0)


def snr_db(test: Waveform, reference: Waveform) -> float:
    """10 log10(sum ref^2 / sum (test - ref)^2), capped at +/-120 dB."""
    if len(test) != len(reference):
        raise LengthMismatch(f"{len(test)} vs {len(reference)} samples")
    if test.sample_rate != reference.sample_rate:
        raise SampleRateMismatch("sample rates differ")
    signal = float(np.sum(reference.samples ** 2))
    error = float(np.sum((test.samples - reference.samples) ** 2))
    if error == 0.0:
        return SNR_CAP_DB
    if signal == 0.0:
        return -SNR_CAP_DB
    return float(np.clip(10.0 * math.log10(signal / error), -SNR_CAP_DB, SNR_CAP_DB))


def boundary_discontinuity(w: Waveform, boundary: int,
                           window_ms: float = DEFAULT_WINDOW_MS) -> float:
    """Spectral jump across ``boundary`` relative to the utterance's typical flux.

    Log-mel frames (512/128) whose centres fall within ``window_ms`` left
    and right of the boundary are averaged; the score is the distance
    between the two means divided by the mean frame-to-frame log-mel
    distance over the whole signal.
    """
    half = int(round(window_ms * w.sample_rate / 1000.0))
    if half < 1 or boundary - half < 0 or boundary + half > len(w):
        raise BoundaryOutOfRange(
            f"boundary {boundary} +/- {half} samples outside a {len(w)}-sample signal")
    mel = log_mel(w, FLUX_FRAME, FLUX_HOP)
    centres = np.arange(mel.shape[0]) * FLUX_HOP + FLUX_FRAME / 2
    left = (centres >= boundary - half) & (centres < boundary)
    right = (centres >= boundary) & (centres < boundary + half)
    if not left.any() or not right.any():
        raise BoundaryOutOfRange("window too short to hold an analysis frame on each side")
    jump = np.linalg.norm(mel[left].mean(axis=0) - mel[right].mean(axis=0))
    flux = np.linalg.norm(np.diff(mel, axis=0), axis=1).mean() if mel.shape[0] > 1 else 0.0
    if jump == 0.0:
        return 0.0
    return float(jump / max(flux, 1e-12))


@dataclass
class MetricReport:
    """Per-stage metrics; ``stages[name]`` maps metric names to values."""

    stages: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add_stage(self, name: str, w: Waveform, reference: Waveform | None = None,
                  boundaries=(), frame_length: int = 1024, hop_length: int = 256,
                  window_ms: float = DEFAULT_WINDOW_MS) -> dict:
        entry: dict = {}
        if len(w) >= frame_length:
            stats = SpectralStats.of(stft(w, frame_length, hop_length))
            entry["centroid"] = stats.centroid.tolist()
            entry["bandwidth"] = stats.bandwidth.tolist()
            entry["centroid_mean"] = stats.centroid_mean
            entry["bandwidth_mean"] = stats.bandwidth_mean
        if reference is not None and len(reference) == len(w):
            entry["snr_db"] = snr_db(w, reference)
        scores = []
        for b in boundaries:
            try:
                scores.append(boundary_discontinuity(w, int(b), window_ms))
            except BoundaryOutOfRange:
                continue
        if scores:
            entry["boundary_discontinuity"] = float(np.mean(scores))
        self.stages[name] = entry
        return entry

    def to_json(self) -> str:
        return json.dumps({"metadata": self.metadata, "stages": self.stages},
                          indent=2, sort_keys=True)

    def rows(self):
        for stage in sorted(self.stages):
            for metric, value in sorted(self.stages[stage].items()):
                if isinstance(value, list):
                    for i, v in enumerate(value):
                        yield stage, metric, i, v
                else:
                    yield stage, metric, "", value

    def write(self, json_path=None, csv_path=None) -> None:
        if json_path is not None:
            Path(json_path).write_text(self.to_json() + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["stage", "metric", "frame_index", "value"])
                writer.writerows(self.rows())

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        return cls(data.get("stages", {}), data.get("metadata", {}))
