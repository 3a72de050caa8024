"""Speech/noise separation backends.

Every backend only estimates the speech track; the noise track is always
``x - speech``. To make ``speech + noise == x`` hold bit-for-bit, the
speech estimate is first snapped to a fixed-point grid of 2**-48. For any
input that itself lies on that grid (PCM16 and float32 WAV data, the
synthetic fixtures) the subtraction and the later re-addition are then
exact in float64.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (
    DEFAULT_FRAME_LENGTH,
    DEFAULT_HOP_LENGTH,
    SAMPLE_GRID,
    Waveform,
    read_wav,
    resynthesize,
    snap,
    stft,
    write_wav,
)
from .errors import BackendFailure, InvalidSpec, ReferenceMismatch, SignalTooShort

log = logging.getLogger(__name__)

SPECTRAL_FLOOR = 0.05

SEPARATOR_KINDS = ("oracle", "spectral_subtraction", "external")
_REQUIRED = {
    "oracle": ("reference",),
    "spectral_subtraction": (),
    "external": ("command",),
}
_DEFAULTS = {
    "spectral_subtraction": {"percentile": 20.0, "oversubtraction": 1.5},
    "external": {"timeout": 600.0, "cwd": None},
    "oracle": {},
}


@dataclass(frozen=True)
class SeparatorSpec:
    """Backend choice plus kind-specific parameters.

    oracle: ``reference`` (WAV path or Waveform of the clean signal).
    spectral_subtraction: ``percentile``, ``oversubtraction``.
    external: ``command`` (template with {input}, {speech_out}, {noise_out}),
    ``cwd``, ``timeout`` seconds.
    """

    kind: str = "spectral_subtraction"
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SEPARATOR_KINDS:
            raise InvalidSpec(f"unknown separator kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if self.parameters.get(k) is None]
        if missing:
            raise InvalidSpec(f"{self.kind} separator needs {', '.join(missing)}")
        merged = {**_DEFAULTS[self.kind], **self.parameters}
        object.__setattr__(self, "parameters", merged)


@dataclass(frozen=True)
class SeparationResult:
    speech: Waveform
    noise: Waveform


def complement(x: Waveform, speech) -> SeparationResult:
    """Pair a speech estimate with noise = x - speech."""
    speech = np.asarray(speech, dtype=np.float64)
    if speech.shape != x.samples.shape:
        raise BackendFailure(
            f"speech estimate has {speech.size} samples, input has {len(x)}")
    s = snap(speech)
    n = x.samples - s
    inexact = np.count_nonzero(s + n != x.samples)
    if inexact:
        log.warning("input is off the %g sample grid; complement inexact at %d samples",
                    SAMPLE_GRID, inexact)
    return SeparationResult(x.replace(s), x.replace(n))


def spectral_subtract(x: Waveform, noise_floor_percentile: float = 20.0,
                      oversubtraction: float = 1.5,
                      frame_length: int = DEFAULT_FRAME_LENGTH,
                      hop_length: int = DEFAULT_HOP_LENGTH) -> Waveform:
    """Magnitude subtraction against a per-bin percentile noise floor."""
    if not 0 < noise_floor_percentile < 100:
        raise ValueError("percentile must lie in (0, 100)")
    if oversubtraction < 1:
        raise ValueError("oversubtraction must be >= 1")
    if len(x) <= frame_length:
        raise SignalTooShort(f"need more than {frame_length} samples")
    spec = stft(x, frame_length, hop_length)
    mags = spec.magnitudes
    floor = np.percentile(mags, noise_floor_percentile, axis=0)
    cleaned = np.maximum(mags - oversubtraction * floor, SPECTRAL_FLOOR * mags)
    return resynthesize(x, spec, cleaned)


_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


def command_lock(command: str) -> threading.Lock:
    """One lock per external command, so each backend runs one job at a time."""
    with _locks_guard:
        return _locks.setdefault(command, threading.Lock())


def run_command(template: str, substitutions: dict, timeout: float, cwd=None) -> None:
    argv = [token.format(**substitutions) for token in shlex.split(template)]
    with command_lock(template):
        try:
            proc = subprocess.run(argv, cwd=cwd, timeout=timeout,
                                  capture_output=True, text=True)
        except subprocess.TimeoutExpired as exc:
            raise BackendFailure(f"external command timed out after {timeout}s") from exc
        except OSError as exc:
            raise BackendFailure(f"cannot run external command: {exc}") from exc
    if proc.returncode != 0:
        raise BackendFailure(
            f"external command exited with {proc.returncode}: {proc.stderr.strip()[-500:]}")


def _external(x: Waveform, params: dict) -> np.ndarray:
    with tempfile.TemporaryDirectory(prefix="separate-") as tmp:
        tmp = Path(tmp).resolve()
        paths = {"input": tmp / "input.wav", "speech_out": tmp / "speech.wav",
                 "noise_out": tmp / "noise.wav"}
        write_wav(x, paths["input"], "float32")
        run_command(params["command"], {k: str(v) for k, v in paths.items()},
                    float(params["timeout"]), params.get("cwd"))
        try:
            speech = read_wav(paths["speech_out"])
        except Exception as exc:
            raise BackendFailure(f"external separator produced no readable speech: {exc}") from exc
    if speech.sample_rate != x.sample_rate or len(speech) != len(x):
        raise BackendFailure("external separator output does not match input geometry")
    return speech.samples


def _reference(x: Waveform, ref) -> Waveform:
    if not isinstance(ref, Waveform):
        ref = read_wav(ref)
    if len(ref) != len(x) or ref.sample_rate != x.sample_rate:
        raise ReferenceMismatch(
            f"reference has {len(ref)} samples @ {ref.sample_rate} Hz, "
            f"input has {len(x)} @ {x.sample_rate} Hz")
    return ref


def separate(x: Waveform, spec: SeparatorSpec) -> SeparationResult:
    params = spec.parameters
    if spec.kind == "oracle":
        speech = _reference(x, params["reference"]).samples
    elif spec.kind == "spectral_subtraction":
        speech = spectral_subtract(x, float(params["percentile"]),
                                   float(params["oversubtraction"])).samples
    else:
        speech = _external(x, params)
    return complement(x, speech)
