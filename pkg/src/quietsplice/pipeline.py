"""End-to-end orchestration: separate, suppress, edit twice, refine, recombine.

Every intermediate signal is kept under its symbol name and, when an output
directory is given, written as a lossless float64 WAV together with a JSON
manifest and the metric report.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import MetricReport
from .audio import Waveform, write_wav
from .config import PipelineConfig
from .editing import EditScript, apply_edit, fade_samples, is_noop
from .errors import ToolkitError
from .refine import AttentionBlock, embed, multi_head_refine, reconstruct, recombine
from .separation import separate
from .suppress import suppress

STAGES = ("X", "X_s", "X_n", "X_l", "X_e_raw", "X_le", "X_e", "Y")
ARTIFACT_ENCODING = "float64"
MANIFEST_NAME = "manifest.json"
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"


class StageError(ToolkitError):
    """A non-toolkit exception raised inside a named stage."""


@contextmanager
def stage(name: str):
    """Attach ``name`` to any error escaping the block."""
    try:
        yield
    except ToolkitError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (ValueError, ArithmeticError, OSError, MemoryError) as exc:
        raise StageError(f"{type(exc).__name__}: {exc}", stage=name) from exc


@dataclass
class PipelineArtifacts:
    waveforms: dict[str, Waveform]
    report: MetricReport
    manifest: dict
    directory: Path | None = None
    boundaries: list = field(default_factory=list)

    def __getitem__(self, name: str) -> Waveform:
        return self.waveforms[name]


# ---------------------------------------------------------------------------
# Individual stages (also used by the CLI subcommands)
# ---------------------------------------------------------------------------

def separate_stage(x: Waveform, cfg: PipelineConfig) -> tuple[Waveform, Waveform]:
    with stage("separate"):
        result = separate(x, cfg.separator)
    return result.speech, result.noise


def suppress_stage(x_s: Waveform, cfg: PipelineConfig) -> Waveform:
    if not cfg.suppression_enabled:
        return x_s
    with stage("suppress"):
        return suppress(x_s, cfg.sbl, cfg.filter, cfg.sbl_frame_length, cfg.sbl_hop_length)


def edit_stage(x: Waveform, script: EditScript, cfg: PipelineConfig) -> Waveform:
    with stage("edit"):
        return apply_edit(x, script, cfg.editor)


def refine_stage(x_e_raw: Waveform, context: Waveform, cfg: PipelineConfig,
                 block: AttentionBlock | None = None) -> Waveform:
    """Queries from ``x_e_raw``; keys and values from ``context`` (X_l or X_le)."""
    if not cfg.refinement_enabled:
        return x_e_raw
    with stage("refine"):
        block = block if block is not None else cfg.attention_block()
        source = "from_Xle" if cfg.kv_source == "Xle" else "from_Xl"
        query = embed(x_e_raw, block.d_model, "from_Xs", cfg.frame_length,
                      cfg.hop_length)
        keys = embed(context, block.d_model, source, cfg.frame_length, cfg.hop_length)
        return reconstruct(multi_head_refine(query, keys, block), x_e_raw)


def recombine_stage(x_e: Waveform, x_n: Waveform, script: EditScript | None,
                    cfg: PipelineConfig) -> Waveform:
    with stage("recombine"):
        return recombine(x_e, x_n, script, cfg.editor.crossfade_ms)


def edit_boundaries(script: EditScript, n_samples: int, sample_rate: int,
                    fade_ms: float) -> list[int]:
    """Centres of the splice junctions in the edited signal's time axis."""
    if is_noop(script):
        return []
    fade = fade_samples(fade_ms, sample_rate)
    m = script.region_start
    material = script.material_length()
    has_head, has_tail = m > 0, n_samples - script.region_end > 0
    if material == 0:
        return [m - fade // 2] if has_head and has_tail else []
    centres = []
    shift = 0
    if has_head:
        centres.append(m - fade // 2)
        shift = fade
    if has_tail:
        centres.append(m - shift + material - fade + fade // 2)
    return centres


# ---------------------------------------------------------------------------
# Whole pipeline
# ---------------------------------------------------------------------------

def run_front(x: Waveform, cfg: PipelineConfig) -> dict[str, Waveform]:
    """The edit-independent part: X, X_s, X_n, X_l."""
    x_s, x_n = separate_stage(x, cfg)
    return {"X": x, "X_s": x_s, "X_n": x_n, "X_l": suppress_stage(x_s, cfg)}


def run_edit(front: dict[str, Waveform], script: EditScript, cfg: PipelineConfig,
             block: AttentionBlock | None = None) -> dict[str, Waveform]:
    """Apply one edit script on top of :func:`run_front` output."""
    with stage("edit"):
        script.validate(len(front["X"]), cfg.editor.kind)
    out = dict(front)
    out["X_e_raw"] = edit_stage(front["X_s"], script, cfg)
    out["X_le"] = edit_stage(front["X_l"], script, cfg)
    context = out["X_le"] if cfg.kv_source == "Xle" else front["X_l"]
    out["X_e"] = refine_stage(out["X_e_raw"], context, cfg, block)
    out["Y"] = recombine_stage(out["X_e"], front["X_n"], script, cfg)
    return out


def build_report(waves: dict[str, Waveform], cfg: PipelineConfig,
                 boundaries: list[int], reference: Waveform | None = None) -> MetricReport:
    report = MetricReport(metadata={"config_hash": cfg.hash()})
    with stage("analyze"):
        for name in STAGES:
            if name not in waves:
                continue
            edited = name in ("X_e_raw", "X_le", "X_e", "Y")
            report.add_stage(name, waves[name], None if edited else reference,
                             boundaries if edited else (), cfg.frame_length,
                             cfg.hop_length, cfg.window_ms)
        if reference is not None:
            report.add_stage("reference", reference, None, (), cfg.frame_length,
                             cfg.hop_length, cfg.window_ms)
    return report


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _digest(w: Waveform) -> str:
    return hashlib.sha256(w.samples.astype("<f8").tobytes()).hexdigest()


def build_manifest(waves: dict[str, Waveform], cfg: PipelineConfig, script: EditScript) -> dict:
    return {
        "config_hash": cfg.hash(),
        "edit": {"operation": script.operation, "region_start": script.region_start,
                 "region_len": script.region_len,
                 "material_length": script.material_length()},
        "artifacts": {name: f"{name}.wav" for name in STAGES if name in waves},
        "sha256": {name: _digest(waves[name]) for name in STAGES if name in waves},
        "report": {"json": REPORT_JSON, "csv": REPORT_CSV},
    }


def persist(artifacts: PipelineArtifacts, directory) -> None:
    directory = Path(directory)
    with stage("persist"):
        directory.mkdir(parents=True, exist_ok=True)
        for name, file_name in artifacts.manifest["artifacts"].items():
            write_wav(artifacts.waveforms[name], directory / file_name, ARTIFACT_ENCODING)
        artifacts.report.write(directory / REPORT_JSON, directory / REPORT_CSV)
        # the timestamp is the only field outside the config hash and digests
        stamped = {**artifacts.manifest, "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        _atomic_text(directory / MANIFEST_NAME, json.dumps(stamped, indent=2, sort_keys=True) + "\n")
    artifacts.directory = directory


def run_pipeline(x: Waveform, script: EditScript, cfg: PipelineConfig | None = None,
                 out_dir=None, reference: Waveform | None = None,
                 block: AttentionBlock | None = None, front=None) -> PipelineArtifacts:
    """Run every stage; write artifacts to ``out_dir`` when given.

    ``front`` may carry a previous :func:`run_front` result for the same
    input and config, which skips separation and suppression.
    """
    cfg = cfg or PipelineConfig()
    with stage("edit"):
        script.validate(len(x), cfg.editor.kind)
    front = front if front is not None else run_front(x, cfg)
    waves = run_edit(front, script, cfg, block)
    boundaries = edit_boundaries(script, len(x), x.sample_rate, cfg.editor.crossfade_ms)
    report = build_report(waves, cfg, boundaries, reference)
    artifacts = PipelineArtifacts(waves, report, build_manifest(waves, cfg, script),
                                  boundaries=boundaries)
    if out_dir is not None:
        persist(artifacts, out_dir)
    return artifacts
