"""Phase-vocoder time-scale modification and rate splicing.

Rate factor alpha = hop_in / hop_out: the synthesis hop stays fixed and
the analysis hop is derived, so alpha > 1 shortens the signal and
alpha < 1 lengthens it while per-bin phase propagation keeps sinusoidal
components at their original frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lidkit.audio import Waveform
from lidkit.dsp import AnalysisConfig, ComplexSpectrogram, istft, stft
from lidkit.errors import LidKitError

ALPHA_MIN = 0.5
ALPHA_MAX = 2.0


@dataclass(frozen=True)
class StretchSpec:
    """Rate factor plus the analysis configuration it is applied with.

    The effective analysis hop is round(alpha * hop_out); the rate
    actually realised is therefore hop_in / hop_out, which can differ
    from the requested alpha by under half a hop.
    """

    alpha: float
    config: AnalysisConfig = field(default_factory=AnalysisConfig)
    lock_phases: bool = False

    def __post_init__(self):
        if not (ALPHA_MIN <= self.alpha <= ALPHA_MAX):
            raise LidKitError(
                f"alpha {self.alpha} outside engine limit [{ALPHA_MIN}, {ALPHA_MAX}]",
                code="alpha-out-of-range",
            )

    @property
    def hop_in(self) -> int:
        return int(round(self.alpha * self.config.hop_out))

    def analysis_config(self) -> AnalysisConfig:
        return self.config.with_hop_in(self.hop_in)


def princarg(phase: np.ndarray) -> np.ndarray:
    """Wrap phase to (-pi, pi]."""
    return np.pi - np.mod(np.pi - phase, 2.0 * np.pi)


def _propagate_phases(spec: ComplexSpectrogram, hop_in: int, hop_out: int) -> np.ndarray:
    """Accumulate synthesis phases from heterodyned phase increments.

    Per frame and bin: dphi = princarg(theta_l - theta_{l-1} - hop_in*w_k),
    instantaneous frequency w = w_k + dphi/hop_in, synthesis phase
    advances by hop_out*w. Frame 0 copies the analysis phase.
    """
    theta = np.angle(spec.values)
    n = spec.config.fft_size
    k = np.arange(spec.config.num_bins)
    omega = 2.0 * np.pi * k / n

    delta = princarg(np.diff(theta, axis=0) - hop_in * omega)
    inst = omega + delta / hop_in
    synth = np.empty_like(theta)
    synth[0] = theta[0]
    synth[1:] = theta[0] + np.cumsum(hop_out * inst, axis=0)
    return synth


def _lock_to_peaks(magnitudes: np.ndarray, theta: np.ndarray,
                   synth: np.ndarray) -> np.ndarray:
    """Identity phase locking: rotate bins around each magnitude peak
    with the peak's synthesis rotation instead of their own."""
    locked = synth.copy()
    for lam in range(magnitudes.shape[0]):
        mag = magnitudes[lam]
        interior = (mag[1:-1] >= mag[:-2]) & (mag[1:-1] >= mag[2:])
        peaks = np.flatnonzero(interior) + 1
        if len(peaks) == 0:
            continue
        # each bin belongs to its nearest peak
        edges = (peaks[:-1] + peaks[1:]) // 2
        owner = peaks[np.searchsorted(edges, np.arange(len(mag)), side="right")]
        rotation = synth[lam, owner] - theta[lam, owner]
        locked[lam] = theta[lam] + rotation
        locked[lam, peaks] = synth[lam, peaks]
    return locked


def time_stretch(x: Waveform, spec: StretchSpec) -> Waveform:
    """Change duration by 1/alpha without moving spectral peaks."""
    analysis_cfg = spec.analysis_config()
    spectrogram = stft(x, analysis_cfg)

    synth_phase = _propagate_phases(spectrogram, analysis_cfg.hop_in,
                                    analysis_cfg.hop_out)
    magnitudes = np.abs(spectrogram.values)
    if spec.lock_phases:
        synth_phase = _lock_to_peaks(magnitudes, np.angle(spectrogram.values),
                                     synth_phase)

    modified = ComplexSpectrogram(
        values=magnitudes * np.exp(1j * synth_phase),
        config=analysis_cfg,
        sample_rate=x.sample_rate,
    )
    return istft(modified)


def splice_rates(x: Waveform, alphas: list[float] | tuple[float, ...],
                 config: AnalysisConfig | None = None,
                 lock_phases: bool = False) -> Waveform:
    """Concatenate x with time-stretched copies, original first.

    An empty alpha list returns x unchanged.
    """
    config = config or AnalysisConfig()
    parts = [np.asarray(x.samples, dtype=np.float64)]
    for alpha in alphas:
        stretched = time_stretch(x, StretchSpec(alpha=alpha, config=config,
                                                lock_phases=lock_phases))
        parts.append(stretched.samples)
    return Waveform(samples=np.concatenate(parts), sample_rate=x.sample_rate)
