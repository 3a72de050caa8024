"""Pipeline configuration: a flat ``key = value`` text file with dotted sections.

Example::

    # analysis geometry
    analysis.frame_length = 1024
    analysis.hop_length = 256
    analysis.mel_bands = 80

    sbl.enabled = true
    sbl.lambda = 0.01
    filter.b = 0.093981, -0.375923, 0.563885, -0.375923, 0.093981
    filter.a = 1, 0, 0.486029, 0, 0.017665

    separator.kind = oracle
    separator.reference = clean.wav

    editor.kind = splice
    editor.crossfade_ms = 10

    refine.enabled = true
    refine.seed = 0
    refine.kv_source = Xle

    output.directory = out

Relative paths are resolved against the config file's directory. Unknown
keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .audio import DEFAULT_FRAME_LENGTH, DEFAULT_HOP_LENGTH, DEFAULT_MEL_BANDS
from .editing import EditorSpec
from .errors import ConfigError, ToolkitError
from .iir import DEFAULT_FILTER, IirFilter
from .refine import DEFAULT_D_MODEL, DEFAULT_HEADS, AttentionBlock, load_block
from .sbl import SblConfig
from .separation import SeparatorSpec
from .suppress import DEFAULT_SBL_FRAME, DEFAULT_SBL_HOP

CONFIG_ENV = "QUIETSPLICE_CONFIG"
KV_SOURCES = ("Xl", "Xle")

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}

# key -> (type, default); section-specific keys for separator/editor are
# passed through as backend parameters.
_SCALARS = {
    "analysis.frame_length": (int, DEFAULT_FRAME_LENGTH),
    "analysis.hop_length": (int, DEFAULT_HOP_LENGTH),
    "analysis.mel_bands": (int, DEFAULT_MEL_BANDS),
    "analysis.window_ms": (float, 100.0),
    "sbl.enabled": (bool, True),
    "sbl.lambda": (float, 1e-2),
    "sbl.epsilon": (float, 1e-6),
    "sbl.delta": (float, 1e-4),
    "sbl.max_iterations": (int, 100),
    "sbl.dictionary": (str, "overcomplete_dct"),
    "sbl.oversampling": (float, 2.0),
    "sbl.frame_length": (int, DEFAULT_SBL_FRAME),
    "sbl.hop_length": (int, DEFAULT_SBL_HOP),
    "refine.enabled": (bool, True),
    "refine.seed": (int, 0),
    "refine.d_model": (int, DEFAULT_D_MODEL),
    "refine.heads": (int, DEFAULT_HEADS),
    "refine.kv_source": (str, "Xle"),
    "output.directory": (str, "out"),
}
_PATH_KEYS = {"refine.block", "separator.reference"}
_PASSTHROUGH = ("separator.", "editor.")


def _parse_bool(key: str, text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _convert(key: str, kind, text: str):
    if kind is bool:
        return _parse_bool(key, text)
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from exc


def parse_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into an ordered dict of raw strings."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or " " in key:
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class PipelineConfig:
    frame_length: int = DEFAULT_FRAME_LENGTH
    hop_length: int = DEFAULT_HOP_LENGTH
    mel_bands: int = DEFAULT_MEL_BANDS
    window_ms: float = 100.0
    sbl: SblConfig = field(default_factory=SblConfig)
    suppression_enabled: bool = True
    sbl_frame_length: int = DEFAULT_SBL_FRAME
    sbl_hop_length: int = DEFAULT_SBL_HOP
    filter: IirFilter = DEFAULT_FILTER
    separator: SeparatorSpec = field(default_factory=SeparatorSpec)
    editor: EditorSpec = field(default_factory=EditorSpec)
    block_path: Path | None = None
    block_seed: int = 0
    d_model: int = DEFAULT_D_MODEL
    heads: int = DEFAULT_HEADS
    refinement_enabled: bool = True
    kv_source: str = "Xle"
    output_dir: Path = Path("out")

    def __post_init__(self):
        if self.kv_source not in KV_SOURCES:
            raise ConfigError(f"kv_source must be one of {KV_SOURCES}")
        if self.block_path is not None and not Path(self.block_path).is_file():
            raise ConfigError(f"attention block file {self.block_path} does not exist")
        ref = self.separator.parameters.get("reference")
        if isinstance(ref, (str, Path)) and not Path(ref).is_file():
            raise ConfigError(f"oracle reference {ref} does not exist")

    # -- loading ---------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, base_dir=None) -> "PipelineConfig":
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        raw = parse_text(text)
        values = {k: d for k, (_, d) in _SCALARS.items()}
        backend: dict[str, dict] = {"separator": {}, "editor": {}}
        filt = {}
        block = None
        for key, text_value in raw.items():
            if key in _SCALARS:
                values[key] = _convert(key, _SCALARS[key][0], text_value)
            elif key in ("filter.b", "filter.a"):
                filt[key[-1]] = text_value
            elif key == "refine.block":
                block = (base / text_value).resolve()
            elif key.startswith(_PASSTHROUGH):
                section, name = key.split(".", 1)
                if key in _PATH_KEYS:
                    text_value = str((base / text_value).resolve())
                backend[section][name] = text_value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            f = DEFAULT_FILTER if not filt else IirFilter.parse(
                filt.get("b", ",".join(map(str, DEFAULT_FILTER.b))),
                filt.get("a", ",".join(map(str, DEFAULT_FILTER.a))))
            sep_params = dict(backend["separator"])
            sep_kind = sep_params.pop("kind", "spectral_subtraction")
            ed_params = dict(backend["editor"])
            ed_kind = ed_params.pop("kind", "splice")
            for params, names in ((sep_params, ("percentile", "oversubtraction", "timeout")),
                                  (ed_params, ("crossfade_ms", "timeout"))):
                for name in names:
                    if name in params:
                        params[name] = _convert(name, float, params[name])
            sbl = SblConfig(values["sbl.lambda"], values["sbl.epsilon"], values["sbl.delta"],
                            values["sbl.max_iterations"], values["sbl.dictionary"],
                            values["sbl.oversampling"])
            return cls(
                frame_length=values["analysis.frame_length"],
                hop_length=values["analysis.hop_length"],
                mel_bands=values["analysis.mel_bands"],
                window_ms=values["analysis.window_ms"],
                sbl=sbl,
                suppression_enabled=values["sbl.enabled"],
                sbl_frame_length=values["sbl.frame_length"],
                sbl_hop_length=values["sbl.hop_length"],
                filter=f,
                separator=SeparatorSpec(sep_kind, sep_params),
                editor=EditorSpec(ed_kind, ed_params),
                block_path=block,
                block_seed=values["refine.seed"],
                d_model=values["refine.d_model"],
                heads=values["refine.heads"],
                refinement_enabled=values["refine.enabled"],
                kv_source=values["refine.kv_source"],
                output_dir=(base / values["output.directory"]).resolve(),
            )
        except ConfigError:
            raise
        except (ToolkitError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None) -> "PipelineConfig":
        """Load ``path``, else the file named by $QUIETSPLICE_CONFIG, else defaults."""
        if path is None:
            path = os.environ.get(CONFIG_ENV)
            if not path:
                return cls()
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config {path} is not text") from exc
        return cls.from_text(text, path.parent)

    # -- canonical form and hash ------------------------------------------

    def canonical(self) -> str:
        """Sorted ``key = value`` dump of every setting that affects the output.

        Referenced files contribute their content digest rather than their
        path, so moving an unchanged file does not change the hash.
        """
        s = self.sbl
        items = {
            "analysis.frame_length": self.frame_length,
            "analysis.hop_length": self.hop_length,
            "analysis.mel_bands": self.mel_bands,
            "analysis.window_ms": repr(float(self.window_ms)),
            "sbl.enabled": self.suppression_enabled,
            "sbl.lambda": repr(s.lam), "sbl.epsilon": repr(s.epsilon),
            "sbl.delta": repr(s.delta), "sbl.max_iterations": s.max_iterations,
            "sbl.dictionary": s.dictionary_kind, "sbl.oversampling": repr(s.oversampling),
            "sbl.frame_length": self.sbl_frame_length,
            "sbl.hop_length": self.sbl_hop_length,
            "filter.b": ",".join(repr(float(v)) for v in self.filter.b),
            "filter.a": ",".join(repr(float(v)) for v in self.filter.a),
            "separator.kind": self.separator.kind,
            "editor.kind": self.editor.kind,
            "refine.enabled": self.refinement_enabled,
            "refine.seed": self.block_seed,
            "refine.d_model": self.d_model,
            "refine.heads": self.heads,
            "refine.kv_source": self.kv_source,
            "refine.block": _file_digest(Path(self.block_path)) if self.block_path else "none",
        }
        for section, spec in (("separator", self.separator), ("editor", self.editor)):
            for name, value in spec.parameters.items():
                if name == "reference" and isinstance(value, (str, Path)):
                    value = _file_digest(Path(value))
                elif name == "cwd":
                    continue
                elif hasattr(value, "samples"):
                    value = hashlib.sha256(value.samples.tobytes()).hexdigest()
                items[f"{section}.{name}"] = value
        return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n"
                       for k, v in sorted(items.items()))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def attention_block(self) -> AttentionBlock:
        if self.block_path is not None:
            return load_block(self.block_path, self.block_seed)
        return AttentionBlock.init(self.d_model, self.heads, self.block_seed)
