"""In-context refinement: cross-attention from edited speech to suppressed speech.

Queries come from the edited separated speech, keys and values from the
(edited) noise-suppressed speech. The attention output is added back to
the query embedding (residual path), mapped back to log-mel space and
turned into a bounded per-bin gain on the edited speech's own STFT.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import (
    DEFAULT_FRAME_LENGTH,
    DEFAULT_HOP_LENGTH,
    DEFAULT_MEL_BANDS,
    Waveform,
    log_mel,
    mel_filterbank,
    resynthesize,
    stft,
)
from .editing import DEFAULT_CROSSFADE_MS, EditScript, crossfade_splice, is_noop
from .errors import (
    CorruptHeader,
    DimensionMismatch,
    EmptyTrainingSet,
    GeometryMismatch,
    LengthMismatch,
    SampleRateMismatch,
)

DEFAULT_D_MODEL = 128
DEFAULT_HEADS = 8
EMBED_SEED = 0
GAIN_LIMIT_DB = 12.0
SOURCES = ("from_Xs", "from_Xl", "from_Xle")

_MAGIC = b"ICLR"
_VERSION = 1


@dataclass(frozen=True)
class AttentionBlock:
    """Per-head projections stacked as (h, d_model, d_k); W_O is (h*d_k, d_model)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    seed: int = 0

    def __post_init__(self):
        h, d_model, d_k = self.w_q.shape
        if self.w_k.shape != self.w_q.shape or self.w_v.shape != self.w_q.shape:
            raise DimensionMismatch("W_Q, W_K, W_V shapes differ")
        if self.w_o.shape != (h * d_k, d_model):
            raise DimensionMismatch("W_O must be (h*d_k, d_model)")
        if d_model != h * d_k:
            raise DimensionMismatch("d_model must equal h * d_k")
        for m in (self.w_q, self.w_k, self.w_v, self.w_o):
            if not np.all(np.isfinite(m)):
                raise ValueError("attention weights must be finite")

    @property
    def num_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_model(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[2]

    @classmethod
    def init(cls, d_model: int = DEFAULT_D_MODEL, num_heads: int = DEFAULT_HEADS,
             seed: int = 0) -> "AttentionBlock":
        """Seeded Gaussian weights scaled by 1/sqrt(d_model)."""
        if num_heads < 1 or d_model % num_heads:
            raise DimensionMismatch("d_model must be divisible by num_heads")
        d_k = d_model // num_heads
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_model)
        shape = (num_heads, d_model, d_k)
        return cls(rng.standard_normal(shape) * scale, rng.standard_normal(shape) * scale,
                   rng.standard_normal(shape) * scale,
                   rng.standard_normal((d_model, d_model)) * scale, seed)

    def params(self) -> dict:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}


@dataclass(frozen=True)
class FrameEmbedding:
    vectors: np.ndarray  # (frames, d_model)
    source: str
    frame_length: int = DEFAULT_FRAME_LENGTH
    hop_length: int = DEFAULT_HOP_LENGTH
    sample_rate: int = 16000
    projection_seed: int = EMBED_SEED

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown embedding source {self.source!r}")
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise DimensionMismatch("embedding needs at least one frame")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding must be finite")

    @property
    def num_frames(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_model(self) -> int:
        return self.vectors.shape[1]

    def geometry(self) -> tuple:
        return (self.frame_length, self.hop_length, self.sample_rate, self.projection_seed)


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------

def projection(d_model: int, mel_bands: int = DEFAULT_MEL_BANDS,
               seed: int = EMBED_SEED) -> np.ndarray:
    """(mel_bands, d_model) matrix with orthonormal rows (or columns if d_model < bands)."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((max(d_model, mel_bands), min(d_model, mel_bands)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return q.T if d_model >= mel_bands else q


def embed(w: Waveform, d_model: int = DEFAULT_D_MODEL, source: str = "from_Xs",
          frame_length: int = DEFAULT_FRAME_LENGTH, hop_length: int = DEFAULT_HOP_LENGTH,
          seed: int = EMBED_SEED) -> FrameEmbedding:
    """Log-mel frames (80 bands, 0 Hz to Nyquist) times a fixed projection."""
    mel = log_mel(w, frame_length, hop_length)
    vectors = mel @ projection(d_model, mel.shape[1], seed)
    return FrameEmbedding(vectors, source, frame_length, hop_length, w.sample_rate, seed)


def unembed(e: FrameEmbedding, mel_bands: int = DEFAULT_MEL_BANDS) -> np.ndarray:
    """Least-squares log-mel frames for an embedding (exact when d_model >= bands)."""
    return e.vectors @ np.linalg.pinv(projection(e.d_model, mel_bands, e.projection_seed))


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    if Q.ndim != 2 or K.ndim != 2 or Q.shape[1] != K.shape[1]:
        raise DimensionMismatch(f"Q {Q.shape} and K {K.shape} are incompatible")
    return softmax(Q @ K.T / np.sqrt(Q.shape[1]))


def attention_head(Q, K, V) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with a max-subtracted softmax."""
    Q, K, V = (np.asarray(m, dtype=np.float64) for m in (Q, K, V))
    if V.ndim != 2 or V.shape[0] != K.shape[0]:
        raise DimensionMismatch(f"K {K.shape} and V {V.shape} row counts differ")
    return attention_weights(Q, K) @ V


def _forward(xs: np.ndarray, xl: np.ndarray, block: AttentionBlock):
    h, _, d_k = block.w_q.shape
    Q = np.einsum("nd,hdk->hnk", xs, block.w_q)
    K = np.einsum("md,hdk->hmk", xl, block.w_k)
    V = np.einsum("md,hdk->hmk", xl, block.w_v)
    A = softmax(np.einsum("hnk,hmk->hnm", Q, K) / np.sqrt(d_k))
    H = np.einsum("hnm,hmk->hnk", A, V)
    concat = np.transpose(H, (1, 0, 2)).reshape(xs.shape[0], h * d_k)
    out = xs + concat @ block.w_o
    return out, (Q, K, V, A, concat)


def multi_head_refine(xs_emb: FrameEmbedding, xl_emb: FrameEmbedding,
                      block: AttentionBlock) -> FrameEmbedding:
    """xs + [head_1, ..., head_h] W_O with queries from xs, keys/values from xl."""
    if xs_emb.d_model != block.d_model or xl_emb.d_model != block.d_model:
        raise DimensionMismatch(
            f"embeddings ({xs_emb.d_model}, {xl_emb.d_model}) vs block d_model {block.d_model}")
    out, _ = _forward(xs_emb.vectors, xl_emb.vectors, block)
    return replace(xs_emb, vectors=out, source="from_Xs")


def loss_and_grads(pairs, block: AttentionBlock):
    """Mean squared error over all pairs and its gradient w.r.t. every weight.

    ``pairs`` holds (query_input, kv_input, target) matrices.
    """
    h, _, d_k = block.w_q.shape
    grads = {k: np.zeros_like(v) for k, v in block.params().items()}
    total = 0.0
    for xs, xl, target in pairs:
        out, (Q, K, V, A, concat) = _forward(xs, xl, block)
        diff = out - target
        total += np.mean(diff ** 2)
        g_out = 2.0 * diff / diff.size
        grads["w_o"] += concat.T @ g_out
        g_heads = (g_out @ block.w_o.T).reshape(xs.shape[0], h, d_k).transpose(1, 0, 2)
        g_A = np.einsum("hnk,hmk->hnm", g_heads, V)
        g_V = np.einsum("hnm,hnk->hmk", A, g_heads)
        g_S = A * (g_A - np.sum(g_A * A, axis=-1, keepdims=True)) / np.sqrt(d_k)
        g_Q = np.einsum("hnm,hmk->hnk", g_S, K)
        g_K = np.einsum("hnm,hnk->hmk", g_S, Q)
        grads["w_q"] += np.einsum("nd,hnk->hdk", xs, g_Q)
        grads["w_k"] += np.einsum("md,hmk->hdk", xl, g_K)
        grads["w_v"] += np.einsum("md,hmk->hdk", xl, g_V)
    n = len(pairs)
    return total / n, {k: g / n for k, g in grads.items()}


def train_refiner(pairs, block: AttentionBlock, steps: int = 200,
                  learning_rate: float = 1e-3, d_model: int | None = None,
                  suppressor=None):
    """Fit the block so refine(embed(noisy), embed(suppressed)) ~ embed(clean).

    ``pairs`` is a list of (noisy, clean) Waveforms; ``suppressor`` maps a
    noisy Waveform to its suppressed version (defaults to the SBL stage).
    Uses Adam on the analytic gradients of :func:`loss_and_grads`; the
    original block is left untouched. Returns (block, loss_history).
    """
    if not pairs:
        raise EmptyTrainingSet("train_refiner needs at least one pair")
    if steps <= 0:
        return block, []
    if suppressor is None:
        from .suppress import suppress as suppressor
    d_model = d_model or block.d_model
    data = []
    for noisy, clean in pairs:
        if len(noisy) != len(clean):
            raise GeometryMismatch("noisy and clean fixtures differ in length")
        data.append((embed(noisy, d_model).vectors,
                     embed(suppressor(noisy), d_model, "from_Xl").vectors,
                     embed(clean, d_model).vectors))
    return fit(data, block, steps, learning_rate)


def fit(data, block: AttentionBlock, steps: int, learning_rate: float,
        beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Adam on prepared (query_input, kv_input, target) triples."""
    params = {k: v.copy() for k, v in block.params().items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    history = []
    current = block
    for t in range(1, steps + 1):
        loss, grads = loss_and_grads(data, current)
        history.append(loss)
        for k in params:
            m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
            v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
            m_hat = m[k] / (1 - beta1 ** t)
            v_hat = v[k] / (1 - beta2 ** t)
            params[k] = params[k] - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        current = AttentionBlock(**params, seed=block.seed)
    history.append(loss_and_grads(data, current)[0])
    return current, history


# ---------------------------------------------------------------------------
# Back to audio
# ---------------------------------------------------------------------------

def band_gains_to_bins(gains_db: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Interpolate (frames, bands) dB gains onto (frames, bins) via filter weights."""
    weight = fb.sum(axis=0)
    covered = weight > 0
    bins = np.zeros((gains_db.shape[0], fb.shape[1]))
    bins[:, covered] = gains_db @ fb[:, covered] / weight[covered]
    # bins outside every triangle (DC, Nyquist) copy their nearest covered bin
    idx = np.flatnonzero(covered)
    nearest = idx[np.clip(np.searchsorted(idx, np.arange(fb.shape[1])), 0, idx.size - 1)]
    bins[:, ~covered] = bins[:, nearest[~covered]]
    return bins


def reconstruct(refined: FrameEmbedding, reference: Waveform,
                limit_db: float = GAIN_LIMIT_DB) -> Waveform:
    """Reshape ``reference`` so its log-mel moves toward the refined embedding.

    Per-band gains (refined minus reference log-mel) are clamped to
    +/- ``limit_db`` and applied to the reference STFT magnitudes.
    """
    if refined.source != "from_Xs":
        raise GeometryMismatch("reconstruct expects a refined from_Xs embedding")
    ref_emb = embed(reference, refined.d_model, "from_Xs", refined.frame_length,
                    refined.hop_length, refined.projection_seed)
    if ref_emb.geometry() != refined.geometry() or ref_emb.num_frames != refined.num_frames:
        raise GeometryMismatch("refined embedding does not match the reference framing")
    spec = stft(reference, refined.frame_length, refined.hop_length)
    target = unembed(refined)
    current = unembed(ref_emb)
    # log-mel is natural-log power: amplitude dB = 10 log10(e) * delta
    gains_db = np.clip(10.0 * np.log10(np.e) * (target - current), -limit_db, limit_db)
    fb = mel_filterbank(target.shape[1], spec.frame_length, spec.sample_rate,
                        0.0, spec.sample_rate / 2)
    gains = 10.0 ** (band_gains_to_bins(gains_db, fb) / 20.0)
    return resynthesize(reference, spec, spec.magnitudes * gains)


def reconcile_noise(x_n: Waveform, script: EditScript,
                    fade_ms: float = DEFAULT_CROSSFADE_MS) -> Waveform:
    """Edit the noise track with the same geometry as the speech edit.

    The removed region keeps its own noise (trimmed or looped to the new
    material length); inserted material gets a looped copy of the noise just
    before the edit point. Junctions use the speech editor's crossfade.
    """
    if is_noop(script):
        return x_n
    n = x_n.samples
    m = script.region_start
    removed = script.region_end - m
    length = script.material_length()
    if length == 0:
        filler = np.zeros(0)
    else:
        if removed > 0:
            source = n[m:m + removed]
        else:
            span = min(len(n), max(length, 1))
            start = max(0, min(m - span, len(n) - span))
            source = n[start:start + span]
        reps = -(-length // max(source.size, 1))
        filler = np.tile(source, reps)[:length] if source.size else np.zeros(length)
    return crossfade_splice(x_n.replace(n[:m]), x_n.replace(filler),
                            x_n.replace(n[script.region_end:]), fade_ms)


def recombine(x_e: Waveform, x_n: Waveform, script: EditScript | None = None,
              fade_ms: float = DEFAULT_CROSSFADE_MS) -> Waveform:
    """Y = X_e + X_n, reconciling the noise length when the edit changed it."""
    if x_e.sample_rate != x_n.sample_rate:
        raise SampleRateMismatch(f"{x_e.sample_rate} Hz vs {x_n.sample_rate} Hz")
    if len(x_e) != len(x_n):
        if script is None:
            raise LengthMismatch("lengths differ and no edit script was given")
        x_n = reconcile_noise(x_n, script, fade_ms)
        if len(x_n) != len(x_e):
            raise LengthMismatch(
                f"reconciled noise has {len(x_n)} samples, edited speech {len(x_e)}")
    return x_e.replace(x_e.samples + x_n.samples)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_block(block: AttentionBlock, path) -> None:
    h, d_model, d_k = block.w_q.shape
    parts = [_MAGIC, struct.pack("<4i", _VERSION, h, d_model, d_k)]
    for i in range(h):
        for w in (block.w_q[i], block.w_k[i], block.w_v[i]):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(block.w_o, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_block(path, seed: int = 0) -> AttentionBlock:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != _MAGIC:
        raise CorruptHeader("not an attention block file")
    version, h, d_model, d_k = struct.unpack("<4i", data[4:20])
    if version != _VERSION or min(h, d_model, d_k) < 1:
        raise CorruptHeader(f"unsupported block header {version, h, d_model, d_k}")
    per = d_model * d_k
    expected = 20 + 8 * (3 * h * per + h * d_k * d_model)
    if len(data) != expected:
        raise CorruptHeader(f"block file has {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data[20:], dtype="<f8").astype(np.float64)
    heads = flat[:3 * h * per].reshape(h, 3, d_model, d_k)
    w_o = flat[3 * h * per:].reshape(h * d_k, d_model)
    return AttentionBlock(heads[:, 0].copy(), heads[:, 1].copy(), heads[:, 2].copy(),
                          w_o, seed)
