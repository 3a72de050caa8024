"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import MetricReport
from .audio import read_wav, write_wav
from .config import CONFIG_ENV, PipelineConfig
from .editing import OPERATIONS, EditorSpec, EditScript
from .errors import ConfigError, ToolkitError
from .fixtures import fixture_suite
from .iir import IirFilter
from .pipeline import (
    ARTIFACT_ENCODING,
    edit_boundaries,
    edit_stage,
    recombine_stage,
    refine_stage,
    run_pipeline,
    separate_stage,
    stage,
    suppress_stage,
)
from .refine import load_block, save_block
from .separation import SeparatorSpec
from .training import (
    TRAIN_BASE_SEED,
    TRAIN_COUNT,
    TRAIN_LEARNING_RATE,
    TRAIN_STEPS,
    train_edit_refiner,
)

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read(path, what="input"):
    with stage(f"read {what}"):
        return read_wav(path)


def _write(w, path, encoding):
    with stage("write"):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_wav(w, path, encoding)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    changes = {}
    if getattr(args, "filter_b", None) or getattr(args, "filter_a", None):
        try:
            changes["filter"] = IirFilter.parse(
                args.filter_b or ",".join(map(str, cfg.filter.b)),
                args.filter_a or ",".join(map(str, cfg.filter.a)))
        except (ValueError, ToolkitError) as exc:
            raise ConfigError(f"bad filter coefficients: {exc}") from exc
    if getattr(args, "no_suppress", False):
        changes["suppression_enabled"] = False
    if getattr(args, "no_refine", False):
        changes["refinement_enabled"] = False
    if getattr(args, "block", None):
        changes["block_path"] = Path(args.block)
    if getattr(args, "seed", None) is not None:
        changes["block_seed"] = args.seed
    if getattr(args, "kv_source", None):
        changes["kv_source"] = args.kv_source
    if getattr(args, "crossfade_ms", None) is not None:
        changes["editor"] = EditorSpec(cfg.editor.kind,
                                       {**cfg.editor.parameters,
                                        "crossfade_ms": args.crossfade_ms})
    if getattr(args, "separator", None) or getattr(args, "reference_sep", None):
        kind = args.separator or cfg.separator.kind
        params = dict(cfg.separator.parameters) if kind == cfg.separator.kind else {}
        if args.reference_sep:
            params["reference"] = args.reference_sep
        changes["separator"] = _separator(kind, params)
    if not changes:
        return cfg
    try:
        return dataclasses.replace(cfg, **changes)
    except ToolkitError as exc:
        raise ConfigError(str(exc)) from exc


def _separator(kind, params):
    try:
        return SeparatorSpec(kind, params)
    except ToolkitError as exc:
        raise ConfigError(str(exc)) from exc


def _script(args) -> EditScript:
    replacement = None
    if args.replacement:
        replacement = _read(args.replacement, "replacement")
    try:
        return EditScript(args.edit_start, args.edit_len, args.op, replacement,
                          args.orig_transcript, args.target_transcript)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _add_config(p):
    p.add_argument("--config", help=f"config file (default: ${CONFIG_ENV} or built-in defaults)")


def _add_encoding(p):
    p.add_argument("--encoding", choices=("pcm16", "float32", "float64"),
                   default=ARTIFACT_ENCODING, help="WAV sample format for outputs")


def _add_edit(p, required=True):
    p.add_argument("--edit-start", type=int, required=required, help="first sample of the region")
    p.add_argument("--edit-len", type=int, default=0 if not required else None,
                   required=required, help="region length in samples")
    p.add_argument("--op", choices=OPERATIONS, required=required)
    p.add_argument("--replacement", help="WAV with the new material")
    p.add_argument("--orig-transcript")
    p.add_argument("--target-transcript")
    p.add_argument("--crossfade-ms", type=float)


def _add_filter(p):
    p.add_argument("--filter-b", help="comma-separated numerator coefficients")
    p.add_argument("--filter-a", help="comma-separated denominator coefficients")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_separate(args) -> int:
    cfg = _config(args)
    x = _read(args.input)
    x_s, x_n = separate_stage(x, cfg)
    out = Path(args.out)
    _write(x_s, out / "X_s.wav", args.encoding)
    _write(x_n, out / "X_n.wav", args.encoding)
    return EXIT_OK


def cmd_suppress(args) -> int:
    cfg = dataclasses.replace(_config(args), suppression_enabled=True)
    _write(suppress_stage(_read(args.input), cfg), args.out, args.encoding)
    return EXIT_OK


def cmd_edit(args) -> int:
    cfg = _config(args)
    x = _read(args.input)
    _write(edit_stage(x, _script(args), cfg), args.out, args.encoding)
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = dataclasses.replace(_config(args), refinement_enabled=True)
    x_e_raw = _read(args.input)
    context = _read(args.context, "context")
    _write(refine_stage(x_e_raw, context, cfg), args.out, args.encoding)
    return EXIT_OK


def cmd_recombine(args) -> int:
    cfg = _config(args)
    speech = _read(args.speech, "speech")
    noise = _read(args.noise, "noise")
    script = _script(args) if args.op else None
    _write(recombine_stage(speech, noise, script, cfg), args.out, args.encoding)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    w = _read(args.input)
    reference = _read(args.reference, "reference") if args.reference else None
    report = MetricReport(metadata={"input": str(args.input)})
    with stage("analyze"):
        report.add_stage("input", w, reference, args.boundary or (), cfg.frame_length,
                         cfg.hop_length, cfg.window_ms)
        if reference is not None:
            report.add_stage("reference", reference, None, (), cfg.frame_length,
                             cfg.hop_length, cfg.window_ms)
    if args.json:
        with stage("write"):
            report.write(json_path=args.json)
    if args.out:
        with stage("write"):
            report.write(csv_path=args.out)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["stage", "metric", "frame_index", "value"])
        writer.writerows(report.rows())
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    x = _read(args.input)
    script = _script(args)
    reference = _read(args.reference, "reference") if args.reference else None
    out = Path(args.out) if args.out else cfg.output_dir
    artifacts = run_pipeline(x, script, cfg, out, reference)
    print(json.dumps({"output": str(artifacts.directory),
                      "config_hash": artifacts.manifest["config_hash"],
                      "boundaries": edit_boundaries(script, len(x), x.sample_rate,
                                                    cfg.editor.crossfade_ms)}))
    return EXIT_OK


def cmd_fixtures(args) -> int:
    out = Path(args.out)
    index = []
    with stage("fixtures"):
        suite = fixture_suite(args.count, tuple(args.snr), tuple(args.noise_kind),
                              args.seed, duration=args.duration)
    for fx in suite:
        entry = {"name": fx.name, "seed": fx.seed, "snr_db": fx.snr_db,
                 "noise_kind": fx.noise_kind}
        for part in ("noisy", "clean", "noise", "replacement"):
            path = out / f"{fx.name}_{part}.wav"
            _write(getattr(fx, part), path, args.encoding)
            entry[part] = path.name
        index.append(entry)
    with stage("write"):
        (out / "fixtures.json").write_text(json.dumps(index, indent=2) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    with stage("train"):
        start = load_block(args.block, cfg.block_seed) if args.block else None
        block, history = train_edit_refiner(
            count=args.count, base_seed=args.base_seed, steps=args.steps,
            learning_rate=args.lr, cfg=cfg, initial=start)
    with stage("write"):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_block(block, args.out)
    print(json.dumps({"initial_loss": history[0] if history else None,
                      "final_loss": history[-1] if history else None}))
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="quietsplice", description="Noise-robust speech editing toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("separate", help="split a recording into speech and noise")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="directory for X_s.wav and X_n.wav")
    p.add_argument("--separator", choices=("oracle", "spectral_subtraction", "external"))
    p.add_argument("--reference", dest="reference_sep", help="clean WAV for the oracle")
    _add_config(p), _add_encoding(p)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("suppress", help="SBL recovery plus zero-phase filtering")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_filter(p), _add_config(p), _add_encoding(p)
    p.set_defaults(func=cmd_suppress)

    p = sub.add_parser("edit", help="insert, replace or delete a region")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_edit(p), _add_config(p), _add_encoding(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("refine", help="cross-attention refinement of edited speech")
    p.add_argument("--input", required=True, help="edited separated speech (queries)")
    p.add_argument("--context", required=True, help="suppressed speech (keys and values)")
    p.add_argument("--out", required=True)
    p.add_argument("--block", help="attention block file")
    p.add_argument("--seed", type=int, help="seed for an untrained block")
    _add_config(p), _add_encoding(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("recombine", help="add the (reconciled) noise back")
    p.add_argument("--speech", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--out", required=True)
    _add_edit(p, required=False)
    _add_config(p), _add_encoding(p)
    p.set_defaults(func=cmd_recombine)

    p = sub.add_parser("analyze", help="spectral statistics, SNR and boundary scores")
    p.add_argument("--input", required=True)
    p.add_argument("--reference")
    p.add_argument("--boundary", type=int, action="append", help="sample index (repeatable)")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.add_argument("--json", help="also write the report as JSON")
    _add_config(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="run every stage and persist all artifacts")
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="artifact directory (default: output.directory)")
    p.add_argument("--reference", help="clean WAV used for SNR in the report")
    p.add_argument("--separator", choices=("oracle", "spectral_subtraction", "external"))
    p.add_argument("--separator-reference", dest="reference_sep",
                   help="clean WAV for the oracle separator")
    p.add_argument("--block")
    p.add_argument("--seed", type=int)
    p.add_argument("--kv-source", choices=("Xl", "Xle"))
    p.add_argument("--no-suppress", action="store_true")
    p.add_argument("--no-refine", action="store_true")
    _add_edit(p), _add_filter(p), _add_config(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("fixtures", help="write the synthetic test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, nargs="+", default=[0.0, 5.0, 10.0])
    p.add_argument("--noise-kind", nargs="+", choices=("white", "pink"),
                   default=["white", "pink"])
    p.add_argument("--duration", type=float, default=1.5)
    _add_encoding(p)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("train", help="fit an attention block on edited fixtures")
    p.add_argument("--out", required=True, help="block file to write")
    p.add_argument("--count", type=int, default=TRAIN_COUNT)
    p.add_argument("--base-seed", type=int, default=TRAIN_BASE_SEED)
    p.add_argument("--steps", type=int, default=TRAIN_STEPS)
    p.add_argument("--lr", type=float, default=TRAIN_LEARNING_RATE)
    p.add_argument("--block", help="start from this block instead of the seeded one")
    _add_config(p)
    p.set_defaults(func=cmd_train)
    return parser


def _fill_defaults(args):
    for name in ("filter_b", "filter_a", "no_suppress", "no_refine", "block", "seed",
                 "kv_source", "crossfade_ms", "separator", "reference_sep"):
        if not hasattr(args, name):
            setattr(args, name, None)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _fill_defaults(parser.parse_args(argv))
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:  # never show a traceback for bad inputs
        print(f"error: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
