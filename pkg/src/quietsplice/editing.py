"""Region editing: deterministic crossfade splicing or an external editor.

A region is ``region_len`` samples starting at ``region_start``. The splice
editor joins the untouched head, the new material and the untouched tail
with raised-cosine crossfades; each junction overlaps ``fade`` samples, so

    len(out) = len(in) - region_len + len(material) - junctions * fade

where ``junctions`` is 2, or 1 when the material is empty. A script that
removes nothing and inserts nothing (zero-length deletion) is a no-op.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav, write_wav
from .errors import (
    BackendFailure,
    FadeTooLong,
    InvalidSpec,
    MissingReplacement,
    RegionOutOfBounds,
    SampleRateMismatch,
)
from .separation import run_command

OPERATIONS = ("insertion", "replacement", "deletion")
EDITOR_KINDS = ("splice", "external")
DEFAULT_CROSSFADE_MS = 10.0


@dataclass(frozen=True)
class EditScript:
    region_start: int
    region_len: int
    operation: str
    replacement_audio: Waveform | None = None
    orig_transcript: str | None = None
    target_transcript: str | None = None

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise ValueError(f"unknown edit operation {self.operation!r}")
        if self.region_start < 0 or self.region_len < 0:
            raise RegionOutOfBounds("region indices must be non-negative")

    @property
    def region_end(self) -> int:
        """One past the last sample the edit removes."""
        return self.region_start + (0 if self.operation == "insertion" else self.region_len)

    def validate(self, n_samples: int, editor: str = "splice") -> None:
        if self.operation == "insertion":
            if self.region_start > n_samples:
                raise RegionOutOfBounds(
                    f"insertion point {self.region_start} beyond {n_samples} samples")
        elif self.region_start + self.region_len > n_samples:
            raise RegionOutOfBounds(
                f"region [{self.region_start}, {self.region_start + self.region_len}) "
                f"exceeds {n_samples} samples")
        if self.operation != "deletion":
            if editor == "splice" and self.replacement_audio is None:
                raise MissingReplacement(f"{self.operation} needs replacement audio")
            if editor == "external" and not self.target_transcript:
                raise MissingReplacement(f"{self.operation} needs a target transcript")

    def material_length(self) -> int:
        if self.operation == "deletion" or self.replacement_audio is None:
            return 0
        return len(self.replacement_audio)


@dataclass(frozen=True)
class EditorSpec:
    """splice: ``crossfade_ms``. external: ``command``, ``timeout``."""

    kind: str = "splice"
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EDITOR_KINDS:
            raise InvalidSpec(f"unknown editor kind {self.kind!r}")
        if self.kind == "external" and not self.parameters.get("command"):
            raise InvalidSpec("external editor needs a command")
        defaults = ({"crossfade_ms": DEFAULT_CROSSFADE_MS} if self.kind == "splice"
                    else {"timeout": 600.0})
        object.__setattr__(self, "parameters", {**defaults, **self.parameters})

    @property
    def crossfade_ms(self) -> float:
        return float(self.parameters.get("crossfade_ms", DEFAULT_CROSSFADE_MS))


def fade_samples(fade_ms: float, sample_rate: int) -> int:
    if fade_ms < 0:
        raise ValueError("fade must be non-negative")
    return int(round(fade_ms * sample_rate / 1000.0))


def fade_curves(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(fade_out, fade_in) raised-cosine ramps; they sum to exactly 1."""
    t = (np.arange(n) + 0.5) / n
    fade_in = np.sin(0.5 * np.pi * t) ** 2
    return 1.0 - fade_in, fade_in


def _join(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    if n == 0 or a.size == 0 or b.size == 0:
        return np.concatenate([a, b])
    if n > a.size or n > b.size:
        raise FadeTooLong(f"fade of {n} samples exceeds a segment ({a.size}, {b.size})")
    out_ramp, in_ramp = fade_curves(n)
    mixed = a[-n:] * out_ramp + b[:n] * in_ramp
    return np.concatenate([a[:-n], mixed, b[n:]])


def crossfade_splice(head: Waveform, insert: Waveform, tail: Waveform,
                     fade_ms: float = DEFAULT_CROSSFADE_MS) -> Waveform:
    rates = {head.sample_rate, insert.sample_rate, tail.sample_rate}
    if len(rates) != 1:
        raise SampleRateMismatch(f"segments have sample rates {sorted(rates)}")
    n = fade_samples(fade_ms, head.sample_rate)
    if len(insert) == 0:
        return head.replace(_join(head.samples, tail.samples, n))
    for seg in (insert,) + tuple(s for s in (head, tail) if len(s)):
        if n > len(seg):
            raise FadeTooLong(f"fade of {n} samples exceeds a {len(seg)}-sample segment")
    joined = _join(_join(head.samples, insert.samples, n), tail.samples, n)
    return head.replace(joined)


def is_noop(script: EditScript) -> bool:
    """True when the script removes nothing and inserts nothing."""
    return script.region_end == script.region_start and script.material_length() == 0


def splice_edit(x: Waveform, script: EditScript, fade_ms: float) -> Waveform:
    if is_noop(script):
        return x
    m = script.region_start
    head = x.replace(x.samples[:m])
    tail = x.replace(x.samples[script.region_end:])
    if script.operation == "deletion":
        material = x.replace(np.zeros(0))
    else:
        material = script.replacement_audio
        if material.sample_rate != x.sample_rate:
            raise SampleRateMismatch("replacement audio sample rate differs from input")
    return crossfade_splice(head, material, tail, fade_ms)


def external_edit(x: Waveform, script: EditScript, params: dict) -> Waveform:
    with tempfile.TemporaryDirectory(prefix="edit-") as tmp:
        tmp = Path(tmp).resolve()
        src, dst = tmp / "input.wav", tmp / "output.wav"
        write_wav(x, src, "float32")
        subs = {
            "input": str(src), "output": str(dst),
            "region_start": str(script.region_start),
            "region_len": str(script.region_len),
            "orig_transcript": script.orig_transcript or "",
            "target_transcript": script.target_transcript or "",
        }
        run_command(params["command"], subs, float(params["timeout"]), params.get("cwd"))
        try:
            out = read_wav(dst)
        except Exception as exc:
            raise BackendFailure(f"external editor produced no readable output: {exc}") from exc
    if out.sample_rate != x.sample_rate:
        raise BackendFailure("external editor changed the sample rate")
    return out


def apply_edit(x: Waveform, script: EditScript, spec: EditorSpec | None = None) -> Waveform:
    spec = spec or EditorSpec()
    script.validate(len(x), spec.kind)
    if spec.kind == "splice":
        return splice_edit(x, script, spec.crossfade_ms)
    return external_edit(x, script, spec.parameters)


def expected_length(n_samples: int, script: EditScript, fade: int) -> int:
    """Output length of the splice editor for a script applied to n samples."""
    removed = script.region_end - script.region_start
    material = script.material_length()
    head = script.region_start
    tail = n_samples - script.region_end
    if is_noop(script):
        return n_samples
    if material == 0:
        junctions = int(head > 0 and tail > 0 and fade > 0)
    else:
        junctions = int(head > 0 and fade > 0) + int(tail > 0 and fade > 0)
    return n_samples - removed + material - junctions * fade
