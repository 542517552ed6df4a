"""Packaging of frame sequences into fixed-length overlapping blocks.

Sequences at least one block long are cut on a regular step grid plus a
final block covering the last block_length frames (skipped when it
coincides with a grid block). Shorter sequences are repeat-padded by
cyclic tiling before a single block is emitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lidkit.errors import LidKitError
from lidkit.features import FeatureMatrix


@dataclass(frozen=True)
class BlockConfig:
    block_length: int = 100
    block_step: int = 50

    def __post_init__(self):
        if not (1 <= self.block_step <= self.block_length):
            raise LidKitError("need 1 <= block_step <= block_length",
                              code="bad-block-config")


@dataclass
class FeatureBlock:
    values: np.ndarray  # (block_length, D)
    utterance_id: str
    start_frame: int
    label: int | None = None


def repeat_pad(feats: FeatureMatrix, block_length: int) -> FeatureMatrix:
    """Cyclically tile rows until at least block_length of them exist;
    row i of the output is input row i mod T."""
    t = feats.num_frames
    if t >= block_length:
        return feats
    index = np.arange(block_length) % t
    return FeatureMatrix(values=feats.values[index], frame_rate=feats.frame_rate,
                         utterance_id=feats.utterance_id, language=feats.language)


def block_starts(num_frames: int, cfg: BlockConfig) -> list[int]:
    """Start indices for a sequence of num_frames >= block_length frames."""
    starts = list(range(0, num_frames - cfg.block_length + 1, cfg.block_step))
    last = num_frames - cfg.block_length
    if starts[-1] != last:
        starts.append(last)
    return starts


def make_blocks(feats: FeatureMatrix, cfg: BlockConfig,
                label: int | None = None) -> list[FeatureBlock]:
    """Cut a feature matrix into blocks, ordered by start frame."""
    if feats.num_frames < cfg.block_length:
        padded = repeat_pad(feats, cfg.block_length)
        return [FeatureBlock(values=padded.values[: cfg.block_length].copy(),
                             utterance_id=feats.utterance_id, start_frame=0,
                             label=label)]
    return [
        FeatureBlock(values=feats.values[s : s + cfg.block_length].copy(),
                     utterance_id=feats.utterance_id, start_frame=s, label=label)
        for s in block_starts(feats.num_frames, cfg)
    ]
