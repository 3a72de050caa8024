"""Seeded synthetic corpus: vowel-like harmonic signals plus coloured noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Waveform, snap

SNR_LEVELS = (0.0, 5.0, 10.0)


def harmonic_signal(rng: np.random.Generator, duration: float = 1.0,
                    sample_rate: int = DEFAULT_SAMPLE_RATE, f0: float | None = None,
                    harmonics: int = 5, peak: float = 0.5) -> np.ndarray:
    """Vowel-like tone: ``harmonics`` partials of f0 with a smooth envelope."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(120.0, 220.0) if f0 is None else f0
    # slight vibrato keeps the partials from being perfectly stationary
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sample_rate
    amps = rng.uniform(0.5, 1.0, harmonics) / np.arange(1, harmonics + 1)
    offsets = rng.uniform(0, 2 * np.pi, harmonics)
    x = sum(a * np.sin(k * phase + o)
            for k, a, o in zip(range(1, harmonics + 1), amps, offsets))
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.5, 3.0) * t
                                  + rng.uniform(0, 2 * np.pi))
    ramp = min(n // 2, int(0.02 * sample_rate))
    if ramp:
        fade = np.sin(0.5 * np.pi * np.arange(ramp) / ramp) ** 2
        envelope[:ramp] *= fade
        envelope[n - ramp:] *= fade[::-1]
    x = x * envelope
    return peak * x / np.max(np.abs(x))


def white_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """1/f power spectrum by spectral shaping of white noise."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n=n)


def scale_to_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Rescale ``noise`` so that 10 log10(P_clean / P_noise) == snr_db."""
    p_clean = np.mean(clean ** 2)
    p_noise = np.mean(noise ** 2)
    return noise * np.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10)))


@dataclass(frozen=True)
class Fixture:
    name: str
    clean: Waveform
    noise: Waveform
    noisy: Waveform
    replacement: Waveform
    snr_db: float
    noise_kind: str
    seed: int


def make_fixture(seed: int, snr_db: float = 5.0, noise_kind: str = "white",
                 duration: float = 1.5, replacement_duration: float = 0.5,
                 sample_rate: int = DEFAULT_SAMPLE_RATE) -> Fixture:
    rng = np.random.default_rng(seed)
    clean = harmonic_signal(rng, duration, sample_rate)
    n = clean.size
    raw = white_noise(rng, n) if noise_kind == "white" else pink_noise(rng, n)
    # on-grid values keep clean + noise and its separation exact
    clean = snap(clean)
    noise = snap(scale_to_snr(clean, raw, snr_db))
    replacement = snap(harmonic_signal(rng, replacement_duration, sample_rate))
    return Fixture(
        name=f"fx{seed:03d}_{noise_kind}_{int(snr_db)}dB",
        clean=Waveform(clean, sample_rate),
        noise=Waveform(noise, sample_rate),
        noisy=Waveform(clean + noise, sample_rate),
        replacement=Waveform(replacement, sample_rate),
        snr_db=snr_db,
        noise_kind=noise_kind,
        seed=seed,
    )


def fixture_suite(count: int = 6, snr_levels=SNR_LEVELS, noise_kinds=("white", "pink"),
                  base_seed: int = 0, **kwargs) -> list[Fixture]:
    """``count`` fixtures cycling through the noise kinds and SNR levels."""
    combos = [(k, s) for k in noise_kinds for s in snr_levels]
    return [make_fixture(base_seed + i, snr_db=combos[i % len(combos)][1],
                         noise_kind=combos[i % len(combos)][0], **kwargs)
            for i in range(count)]
