"""Short-utterance spoken language identification toolkit.

Waveform-level time-scale modification (phase vocoder), PLP+pitch
acoustic features, a bottleneck DNN trained on phone-class targets,
a block-wise two-layer peephole-LSTM language classifier, and
C_avg / EER evaluation. Pure numpy/scipy, CPU only.
"""

from lidkit.errors import LidKitError

__version__ = "0.1.0"

__all__ = ["LidKitError", "__version__"]
