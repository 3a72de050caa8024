"""Noise suppression: frame-wise SBL recovery followed by zero-phase filtering."""
from __future__ import annotations

import numpy as np

from .audio import Waveform, frame_signal, hann, num_frames, overlap_add
from .errors import InvalidHop
from .iir import DEFAULT_FILTER, IirFilter, filtfilt
from .sbl import Dictionary, SblConfig, build_dictionary, sbl_solve_batch

DEFAULT_SBL_FRAME = 64
DEFAULT_SBL_HOP = 16


def sbl_reconstruct(x: np.ndarray, cfg: SblConfig, frame_length: int,
                    hop_length: int, dictionary: Dictionary | None = None) -> np.ndarray:
    """Sparse estimate D @ mu of every Hann-windowed frame, overlap-added."""
    if not 0 < hop_length <= frame_length // 2:
        raise InvalidHop("SBL hop must be in (0, frame_length/2]")
    num_frames(len(x), frame_length, hop_length)
    if dictionary is None:
        dictionary = build_dictionary(frame_length, cfg.oversampling, cfg.dictionary_kind)
    window = hann(frame_length)
    frames = frame_signal(x, frame_length, hop_length) * window
    mu, _, _ = sbl_solve_batch(frames, dictionary, cfg)
    # x + OLA(residual) equals OLA(D mu) wherever the window sum is full, and
    # keeps the tapered edge samples from amplifying the fit error
    residual = mu @ dictionary.atoms.T - frames
    return x + overlap_add(residual, hop_length, window, len(x))


def suppress(x_s: Waveform, cfg: SblConfig | None = None, f: IirFilter = DEFAULT_FILTER,
             frame_length: int = DEFAULT_SBL_FRAME, hop_length: int = DEFAULT_SBL_HOP,
             dictionary: Dictionary | None = None) -> Waveform:
    """X_l = filtfilt(f, overlap-added SBL estimate of X_s)."""
    cfg = cfg or SblConfig()
    recovered = sbl_reconstruct(x_s.samples, cfg, frame_length, hop_length, dictionary)
    return x_s.replace(filtfilt(f, recovered))
