import numpy as np
import pytest

from lidkit.audio import Waveform


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def sine(freq_hz: float, duration_s: float = 1.0, sample_rate: int = 16000,
         amplitude: float = 0.3) -> Waveform:
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    return Waveform(samples=amplitude * np.sin(2 * np.pi * freq_hz * t),
                    sample_rate=sample_rate)


def snr_db(reference: np.ndarray, test: np.ndarray) -> float:
    err = reference - test
    return 10.0 * np.log10(float((reference ** 2).sum()) /
                           max(float((err ** 2).sum()), 1e-300))
