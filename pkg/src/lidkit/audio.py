"""Mono 16-bit PCM WAV reading/writing and the Waveform container.

Only the 16 kHz / 16-bit / mono flavour used by the corpus is accepted;
anything else is rejected rather than converted so the quantize ->
write -> read round trip stays bit exact.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from lidkit.errors import WavError


@dataclass(frozen=True)
class Waveform:
    """Mono waveform: float samples (nominally in [-1, 1]) plus rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise WavError("sample_rate must be positive", code="bad-sample-rate")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def quantize(samples: np.ndarray) -> np.ndarray:
    """Map floats to int16 words: scale by 32768, round, clip."""
    words = np.rint(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(words, -32768, 32767).astype(np.int16)


def read_wav(path: str | os.PathLike) -> Waveform:
    """Read a RIFF/WAVE file containing mono 16-bit integer PCM.

    Raises WavError with codes: missing-file, bad-container,
    unsupported-encoding, multi-channel, unsupported-bit-depth.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise WavError(f"no such file: {path}", code="missing-file") from None

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"not a RIFF/WAVE file: {path}", code="bad-container")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            pcm = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word aligned

    if fmt is None or len(fmt) < 16 or pcm is None:
        raise WavError(f"missing fmt/data chunk: {path}", code="bad-container")

    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise WavError(
            f"unsupported encoding (format code {audio_format}, want PCM=1)",
            code="unsupported-encoding",
        )
    if channels != 1:
        raise WavError(f"expected mono, got {channels} channels", code="multi-channel")
    if bits != 16:
        raise WavError(f"expected 16-bit samples, got {bits}", code="unsupported-bit-depth")

    words = np.frombuffer(pcm[: len(pcm) - (len(pcm) % 2)], dtype="<i2")
    return Waveform(samples=words.astype(np.float64) / 32768.0, sample_rate=rate)


def write_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write 16-bit little-endian PCM mono; out-of-range samples clipped."""
    if len(w) == 0:
        raise WavError("refusing to write empty waveform", code="empty-waveform")

    words = quantize(w.samples)
    payload = words.astype("<i2").tobytes()
    byte_rate = w.sample_rate * 2
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate, byte_rate, 2, 16),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)
