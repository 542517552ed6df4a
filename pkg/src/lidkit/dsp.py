"""STFT analysis / weighted overlap-add synthesis used by the phase vocoder.

Analysis frames the signal at hop ``hop_in``, windows with a periodic
Hann, and keeps the N/2+1 non-negative-frequency bins. Synthesis
inverse-transforms each frame, re-windows, overlap-adds at ``hop_out``
and divides by the accumulated squared-window envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from lidkit.audio import Waveform
from lidkit.errors import LidKitError

ENVELOPE_FLOOR = 1e-8


@dataclass(frozen=True)
class AnalysisConfig:
    """Frame length, analysis/synthesis hops, and FFT size (all samples)."""

    frame_length: int = 2048
    hop_in: int = 512
    hop_out: int = 512
    fft_size: int = 2048

    def __post_init__(self):
        L, n = self.frame_length, self.fft_size
        if not (0 < self.hop_in <= L):
            raise LidKitError(f"hop_in must be in (0, {L}]", code="bad-analysis-config")
        if not (0 < self.hop_out <= L):
            raise LidKitError(f"hop_out must be in (0, {L}]", code="bad-analysis-config")
        if n < L or n & (n - 1):
            raise LidKitError("fft_size must be a power of two >= frame_length",
                              code="bad-analysis-config")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def with_hop_in(self, hop_in: int) -> "AnalysisConfig":
        return replace(self, hop_in=hop_in)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """frames x bins complex STFT values plus the config that made them."""

    values: np.ndarray  # (num_frames, num_bins) complex
    config: AnalysisConfig
    sample_rate: int

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann: 0.5 * (1 - cos(2*pi*n/length)), n = 0..length-1."""
    if length < 2:
        raise LidKitError("window length must be >= 2", code="bad-window-length")
    n = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / length))


def _frame_starts(num_samples: int, frame_length: int, hop: int) -> tuple[int, bool]:
    """Number of full frames and whether a zero-padded tail frame is needed."""
    full = (num_samples - frame_length) // hop + 1
    covered = (full - 1) * hop + frame_length
    return full, covered < num_samples


def stft(x: Waveform, cfg: AnalysisConfig) -> ComplexSpectrogram:
    """Forward STFT at hop ``hop_in``; trailing partial frame zero-padded."""
    samples = np.asarray(x.samples, dtype=np.float64)
    L = cfg.frame_length
    if len(samples) < L:
        raise LidKitError(
            f"signal ({len(samples)} samples) shorter than one frame ({L})",
            code="signal-too-short",
        )
    full, has_tail = _frame_starts(len(samples), L, cfg.hop_in)
    num_frames = full + (1 if has_tail else 0)

    frames = np.zeros((num_frames, L), dtype=np.float64)
    for lam in range(num_frames):
        start = lam * cfg.hop_in
        chunk = samples[start : start + L]
        frames[lam, : len(chunk)] = chunk

    window = hann_window(L)
    values = np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)
    return ComplexSpectrogram(values=values, config=cfg, sample_rate=x.sample_rate)


def istft(spec: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse STFT at hop ``hop_out``.

    Each frame is inverse-transformed, re-windowed with the analysis
    Hann, summed at the synthesis hop, and the result is divided by the
    accumulated squared-window envelope (floored to avoid edge blow-up).
    """
    if spec.num_frames == 0:
        raise LidKitError("empty spectrogram", code="empty-spectrogram")
    cfg = spec.config
    L, hop = cfg.frame_length, cfg.hop_out

    frames = np.fft.irfft(spec.values, n=cfg.fft_size, axis=1)[:, :L]
    window = hann_window(L)
    frames = frames * window

    out_len = (spec.num_frames - 1) * hop + L
    out = np.zeros(out_len, dtype=np.float64)
    envelope = np.zeros(out_len, dtype=np.float64)
    wsq = window * window
    for lam in range(spec.num_frames):
        start = lam * hop
        out[start : start + L] += frames[lam]
        envelope[start : start + L] += wsq

    out /= np.maximum(envelope, ENVELOPE_FLOOR)
    return Waveform(samples=out, sample_rate=spec.sample_rate)
