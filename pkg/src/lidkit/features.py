"""Acoustic front end: PLP-style cepstra, pitch features, deltas,
global CMVN, energy VAD, and context splicing.

All per-frame analysis shares one framing rule (25 ms window / 10 ms
step by default, trailing partial frame dropped) so PLP, pitch, VAD
masks and frame labels stay aligned row for row.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from lidkit.audio import Waveform
from lidkit.dsp import hann_window
from lidkit.errors import LidKitError, ShapeError

FLOOR_LOG_ENERGY = np.log(1e-10)
VARIANCE_FLOOR = 1e-8
VOICING_THRESHOLD = 0.5

ARCHIVE_MAGIC = b"LIDFEAT1"
ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class FrameConfig:
    """Short-time analysis parameters shared by all feature extractors."""

    sample_rate: int = 16000
    frame_length_s: float = 0.025
    frame_step_s: float = 0.010
    preemphasis: float = 0.97
    cepstral_order: int = 16
    num_channels: int = 21
    pitch_min_hz: float = 60.0
    pitch_max_hz: float = 400.0

    def __post_init__(self):
        if self.cepstral_order < 1:
            raise LidKitError("cepstral_order must be >= 1", code="bad-frame-config")
        if self.num_channels < self.cepstral_order + 2:
            raise LidKitError(
                "num_channels must exceed cepstral_order + 1 so the "
                "band autocorrelation covers every LPC lag",
                code="bad-frame-config",
            )

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_length_s * self.sample_rate))

    @property
    def frame_step(self) -> int:
        return int(round(self.frame_step_s * self.sample_rate))

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_step_s

    @property
    def fft_size(self) -> int:
        n = 1
        while n < self.frame_length:
            n *= 2
        return n


@dataclass
class FeatureMatrix:
    """T x D per-frame features with utterance metadata."""

    values: np.ndarray
    frame_rate: float
    utterance_id: str = ""
    language: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ShapeError("feature matrix must be 2-D with at least one frame")
        if not np.isfinite(self.values).all():
            raise LidKitError("feature matrix contains NaN/Inf", code="non-finite-features")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CmvnStats:
    """Global per-dimension mean/variance; variance floored at 1e-8."""

    mean: np.ndarray
    variance: np.ndarray
    frame_count: int
    floored_dims: tuple[int, ...] = ()


def frame_count(num_samples: int, cfg: FrameConfig) -> int:
    if num_samples < cfg.frame_length:
        raise LidKitError(
            f"signal ({num_samples} samples) shorter than one frame "
            f"({cfg.frame_length})",
            code="signal-too-short",
        )
    return 1 + (num_samples - cfg.frame_length) // cfg.frame_step


def frame_signal(samples: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Slice into (T, frame_length) rows; trailing partial frame dropped."""
    samples = np.asarray(samples, dtype=np.float64)
    count = frame_count(len(samples), cfg)
    idx = np.arange(cfg.frame_length)[None, :] + cfg.frame_step * np.arange(count)[:, None]
    return samples[idx]


# ---------------------------------------------------------------------------
# PLP cepstra
# ---------------------------------------------------------------------------

def hz_to_bark(f):
    return 6.0 * np.arcsinh(np.asarray(f, dtype=np.float64) / 600.0)


def _bark_filterbank(cfg: FrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular (in bark) filterbank matrix (channels, bins) and the
    channel centre frequencies in Hz."""
    nyquist = cfg.sample_rate / 2.0
    bins_hz = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    bins_bark = hz_to_bark(bins_hz)
    top = hz_to_bark(nyquist)
    centers = np.linspace(0.5, top - 0.5, cfg.num_channels)
    weights = np.maximum(0.0, 1.0 - np.abs(bins_bark[None, :] - centers[:, None]))
    centers_hz = 600.0 * np.sinh(centers / 6.0)
    return weights, centers_hz


def _equal_loudness(f_hz: np.ndarray) -> np.ndarray:
    fsq = np.asarray(f_hz, dtype=np.float64) ** 2
    return (fsq / (fsq + 1.6e5)) ** 2 * (fsq + 1.44e6) / (fsq + 9.61e6)


def plp_autocorr(w: Waveform, cfg: FrameConfig) -> np.ndarray:
    """Per-frame autocorrelation (T, order+1) of the compressed auditory
    spectrum: pre-emphasis, Hann window, power spectrum, bark filterbank,
    equal-loudness weighting, cube-root compression, inverse transform."""
    x = np.asarray(w.samples, dtype=np.float64)
    x = np.append(x[:1], x[1:] - cfg.preemphasis * x[:-1])
    frames = frame_signal(x, cfg) * hann_window(cfg.frame_length)

    psd = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    fbank, centers_hz = _bark_filterbank(cfg)
    bands = psd @ fbank.T
    bands *= _equal_loudness(centers_hz)
    bands = np.maximum(bands, 0.0) ** 0.33

    # edge channels are unreliable; copy the neighbours
    bands[:, 0] = bands[:, 1]
    bands[:, -1] = bands[:, -2]

    # even-symmetric extension -> inverse DFT -> autocorrelation lags
    extended = np.concatenate([bands, bands[:, -2:0:-1]], axis=1)
    acf = np.fft.ifft(extended, axis=1).real
    return acf[:, : cfg.cepstral_order + 1]


def levinson(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Levinson-Durbin recursion, batched over leading dimensions.

    Solves toeplitz(r[..., :P]) @ a = -r[..., 1:P+1]; returns the LPC
    coefficients a (..., P) of A(z) = 1 + sum a_k z^-k and the final
    prediction error.
    """
    r = np.asarray(r, dtype=np.float64)
    order = r.shape[-1] - 1
    if order < 1:
        raise LidKitError("need at least lag 1 for LPC", code="bad-lpc-order")
    a = np.zeros(r.shape[:-1] + (order,), dtype=np.float64)
    err = r[..., 0].copy()
    for i in range(1, order + 1):
        acc = r[..., i].copy()
        for j in range(1, i):
            acc += a[..., j - 1] * r[..., i - j]
        k = -acc / err
        a_new = a.copy()
        a_new[..., i - 1] = k
        for j in range(1, i):
            a_new[..., j - 1] = a[..., j - 1] + k * a[..., i - j - 1]
        a = a_new
        err = err * (1.0 - k * k)
    return a, err


def lpc_to_cepstrum(a: np.ndarray, err: np.ndarray, n_ceps: int) -> np.ndarray:
    """Cepstrum of gain/A(z): c_0 = ln(err), then the standard recursion
    c_n = -a_n - sum_{k=1}^{n-1} (k/n) c_k a_{n-k} (a_m = 0 beyond P)."""
    a = np.asarray(a, dtype=np.float64)
    order = a.shape[-1]
    ceps = np.zeros(a.shape[:-1] + (n_ceps,), dtype=np.float64)
    ceps[..., 0] = np.log(np.maximum(err, 1e-30))
    for n in range(1, n_ceps):
        acc = -(a[..., n - 1].copy() if n <= order else 0.0)
        for k in range(max(1, n - order), n):
            acc -= (k / n) * ceps[..., k] * a[..., n - k - 1]
        ceps[..., n] = acc
    return ceps


def compute_plp(w: Waveform, cfg: FrameConfig) -> FeatureMatrix:
    """PLP cepstra, T x (order+1). All-zero frames get a finite
    floor-energy cepstrum instead of NaN."""
    acf = plp_autocorr(w, cfg)
    live = acf[:, 0] > 1e-20

    ceps = np.empty((acf.shape[0], cfg.cepstral_order + 1), dtype=np.float64)
    ceps[~live] = 0.0
    ceps[~live, 0] = FLOOR_LOG_ENERGY
    if live.any():
        r = acf[live]
        r[:, 0] *= 1.0 + 1e-9  # guards near-singular band spectra
        a, err = levinson(r)
        ceps[live] = lpc_to_cepstrum(a, err, cfg.cepstral_order + 1)
    return FeatureMatrix(values=ceps.astype(np.float32), frame_rate=cfg.frame_rate,
                         utterance_id=w_id(w))


def w_id(w: Waveform) -> str:
    return getattr(w, "utterance_id", "")


# ---------------------------------------------------------------------------
# Pitch
# ---------------------------------------------------------------------------

def compute_pitch(w: Waveform, cfg: FrameConfig) -> FeatureMatrix:
    """Per-frame [log-pitch, voicing confidence, delta-log-pitch].

    Pitch comes from the highest normalized-autocorrelation peak in the
    configured lag band with parabolic refinement; sub-octave peaks
    within 95% of the best are preferred. Unvoiced frames carry pitch
    interpolated from neighbouring voiced frames.
    """
    frames = frame_signal(w.samples, cfg)
    frames = frames - frames.mean(axis=1, keepdims=True)
    num_frames, width = frames.shape

    lag_min = max(2, int(np.floor(cfg.sample_rate / cfg.pitch_max_hz)))
    lag_max = min(width - 2, int(np.ceil(cfg.sample_rate / cfg.pitch_min_hz)))
    if lag_max <= lag_min:
        raise LidKitError("pitch lag band empty for this frame length",
                          code="bad-pitch-band")
    lags = np.arange(lag_min - 1, lag_max + 2)  # pad one lag each side

    nfft = 1
    while nfft < 2 * width:
        nfft *= 2
    spectrum = np.fft.rfft(frames, n=nfft, axis=1)
    raw = np.fft.irfft(spectrum * np.conj(spectrum), n=nfft, axis=1)[:, : width]

    csum = np.concatenate([np.zeros((num_frames, 1)), np.cumsum(frames ** 2, axis=1)],
                          axis=1)
    head = csum[:, width - lags]
    tail = csum[:, [width]] - csum[:, lags]
    ncc = raw[:, lags] / np.sqrt(np.maximum(head * tail, 1e-20))

    inner = ncc[:, 1:-1]  # columns aligned with lags lag_min..lag_max
    best = inner.max(axis=1)
    is_peak = (inner >= ncc[:, :-2]) & (inner >= ncc[:, 2:])
    qualified = is_peak & (inner >= 0.95 * best[:, None])
    has_candidate = qualified.any(axis=1)
    first = np.where(has_candidate, qualified.argmax(axis=1), inner.argmax(axis=1))

    rows = np.arange(num_frames)
    y0 = inner[rows, first]
    ym = ncc[rows, first]
    yp = ncc[rows, first + 2]
    denom = ym - 2.0 * y0 + yp
    safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (ym - yp) / safe, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    lag_est = lag_min + first + shift

    energy = csum[:, width]
    conf = np.where(energy > 1e-10, np.clip(y0, 0.0, 1.0), 0.0)
    f0 = cfg.sample_rate / lag_est

    voiced = conf >= VOICING_THRESHOLD
    if voiced.any():
        idx = np.flatnonzero(voiced)
        f0 = np.interp(np.arange(num_frames), idx, f0[idx])
    else:
        f0 = np.full(num_frames, np.sqrt(cfg.pitch_min_hz * cfg.pitch_max_hz))

    log_f0 = np.log(f0)
    delta = _regression_delta(log_f0[:, None], 2)[:, 0]
    values = np.stack([log_f0, conf, delta], axis=1)
    return FeatureMatrix(values=values.astype(np.float32), frame_rate=cfg.frame_rate,
                         utterance_id=w_id(w))


# ---------------------------------------------------------------------------
# Deltas, CMVN, VAD, splicing
# ---------------------------------------------------------------------------

def _regression_delta(values: np.ndarray, half_width: int) -> np.ndarray:
    """Standard regression delta with edge replication:
    d_t = sum_k k*(x_{t+k} - x_{t-k}) / (2*sum_k k^2)."""
    t = values.shape[0]
    norm = 2.0 * sum(k * k for k in range(1, half_width + 1))
    delta = np.zeros_like(values, dtype=np.float64)
    index = np.arange(t)
    for k in range(1, half_width + 1):
        fwd = np.minimum(index + k, t - 1)
        bwd = np.maximum(index - k, 0)
        delta += k * (values[fwd] - values[bwd])
    return delta / norm


def append_deltas(feats: FeatureMatrix, half_width: int = 2) -> FeatureMatrix:
    """Append delta and delta-delta columns: D -> 3*D."""
    base = feats.values.astype(np.float64)
    d1 = _regression_delta(base, half_width)
    d2 = _regression_delta(d1, half_width)
    values = np.concatenate([base, d1, d2], axis=1).astype(np.float32)
    return FeatureMatrix(values=values, frame_rate=feats.frame_rate,
                         utterance_id=feats.utterance_id, language=feats.language)


def estimate_cmvn(matrices: list[FeatureMatrix]) -> CmvnStats:
    """Pooled global mean/variance over a feature set (fixed accumulation
    order for reproducibility)."""
    if not matrices:
        raise LidKitError("need at least one feature matrix", code="empty-feature-set")
    dim = matrices[0].dim
    total = np.zeros(dim, dtype=np.float64)
    total_sq = np.zeros(dim, dtype=np.float64)
    count = 0
    for m in matrices:
        if m.dim != dim:
            raise ShapeError(f"inconsistent feature dim: {m.dim} != {dim}")
        v = m.values.astype(np.float64)
        total += v.sum(axis=0)
        total_sq += (v * v).sum(axis=0)
        count += m.num_frames
    mean = total / count
    variance = total_sq / count - mean * mean
    floored = tuple(int(i) for i in np.flatnonzero(variance < VARIANCE_FLOOR))
    variance = np.maximum(variance, VARIANCE_FLOOR)
    return CmvnStats(mean=mean, variance=variance, frame_count=count,
                     floored_dims=floored)


def apply_cmvn(feats: FeatureMatrix, stats: CmvnStats) -> FeatureMatrix:
    if feats.dim != len(stats.mean):
        raise ShapeError(f"CMVN dim {len(stats.mean)} != features {feats.dim}")
    values = (feats.values.astype(np.float64) - stats.mean) / np.sqrt(stats.variance)
    return FeatureMatrix(values=values.astype(np.float32), frame_rate=feats.frame_rate,
                         utterance_id=feats.utterance_id, language=feats.language)


def frame_log_energy(w: Waveform, cfg: FrameConfig) -> np.ndarray:
    frames = frame_signal(w.samples, cfg)
    return np.log((frames ** 2).sum(axis=1) + 1e-12)


def energy_vad(x: Waveform | FeatureMatrix, cfg: FrameConfig,
               k: float = 0.5, min_range: float = 2.0) -> np.ndarray:
    """Boolean keep-mask: frames with log-energy strictly below
    (mean - k*std) of the utterance are marked silent.

    Utterances whose log-energy dynamic range is under ``min_range``
    (uniformly loud or uniformly silent) have nothing to split and are
    kept whole. The mask is never empty.
    """
    if isinstance(x, Waveform):
        energy = frame_log_energy(x, cfg)
    else:
        energy = x.values[:, 0].astype(np.float64)
    if energy.max() - energy.min() < min_range:
        return np.ones(len(energy), dtype=bool)
    threshold = energy.mean() - k * energy.std()
    mask = energy >= threshold
    if not mask.any():
        mask[int(np.argmax(energy))] = True
    return mask


def splice_context(feats: FeatureMatrix, context: int) -> FeatureMatrix:
    """Concatenate each frame with its neighbours: frame t becomes
    [t-(M-1)/2 .. t+(M-1)/2] with edge replication; D -> M*D."""
    if context % 2 != 1:
        raise LidKitError("context width must be odd", code="bad-context-width")
    half = (context - 1) // 2
    t = feats.num_frames
    index = np.arange(t)
    cols = [feats.values[np.clip(index + off, 0, t - 1)]
            for off in range(-half, half + 1)]
    values = np.concatenate(cols, axis=1)
    return FeatureMatrix(values=values, frame_rate=feats.frame_rate,
                         utterance_id=feats.utterance_id, language=feats.language)


def plp_pitch_features(w: Waveform, cfg: FrameConfig) -> FeatureMatrix:
    """The full front-end vector: [plp | delta | delta-delta | pitch3]."""
    plp = append_deltas(compute_plp(w, cfg))
    pitch = compute_pitch(w, cfg)
    values = np.concatenate([plp.values, pitch.values], axis=1)
    return FeatureMatrix(values=values, frame_rate=cfg.frame_rate,
                         utterance_id=w_id(w))


# ---------------------------------------------------------------------------
# Feature archive files
# ---------------------------------------------------------------------------

def write_features(feats: FeatureMatrix, path: str | os.PathLike) -> None:
    """Binary archive: magic, version, T, D, frame_rate, id, then
    row-major little-endian float32 values."""
    ident = feats.utterance_id.encode("utf-8")
    header = ARCHIVE_MAGIC + struct.pack(
        "<IIIfH", ARCHIVE_VERSION, feats.num_frames, feats.dim,
        feats.frame_rate, len(ident))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ident)
        fh.write(np.ascontiguousarray(feats.values, dtype="<f4").tobytes())


def read_features(path: str | os.PathLike) -> FeatureMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(ARCHIVE_MAGIC)] != ARCHIVE_MAGIC:
        raise LidKitError(f"not a feature archive: {path}", code="bad-feature-archive")
    offset = len(ARCHIVE_MAGIC)
    version, t, d, frame_rate, id_len = struct.unpack_from("<IIIfH", data, offset)
    if version != ARCHIVE_VERSION:
        raise LidKitError(f"unsupported archive version {version}",
                          code="bad-feature-archive")
    offset += struct.calcsize("<IIIfH")
    ident = data[offset : offset + id_len].decode("utf-8")
    offset += id_len
    values = np.frombuffer(data, dtype="<f4", count=t * d, offset=offset)
    return FeatureMatrix(values=values.reshape(t, d).copy(), frame_rate=frame_rate,
                         utterance_id=ident)
