"""Run configuration: built-in profiles plus TOML overrides.

``desk-scale`` (the default) runs the whole pipeline in minutes on a
laptop CPU; ``paper-scale`` records the full-size hyperparameters for
documentation. Unknown keys in a config file are rejected.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

from lidkit.blocking import BlockConfig
from lidkit.dsp import AnalysisConfig
from lidkit.errors import ConfigError
from lidkit.features import FrameConfig

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class CorpusConfig:
    train: int = 20
    dev: int = 6
    test: int = 10
    duration_s: float = 4.0

    @property
    def per_split_counts(self) -> dict[str, int]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


@dataclass(frozen=True)
class PipelineConfig:
    profile: str = "desk-scale"
    seed: int = 12345
    sample_rate: int = 16000

    frame: FrameConfig = field(default_factory=FrameConfig)
    context_frames: int = 5
    vad_k: float = 0.5
    block: BlockConfig = field(default_factory=BlockConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    bn_hidden_sizes: tuple[int, ...] = (64, 64)
    bn_bottleneck: int = 32
    bn_targets: int | None = None  # inferred from the corpus when None
    bn_lr: float = 0.3
    bn_epochs: int = 12
    bn_batch: int = 128

    cls_lstm_size: int = 32
    cls_relu_size: int = 64
    num_languages: int | None = None  # inferred from the corpus when None
    cls_lr: float = 0.002
    cls_epochs: int = 12
    cls_batch: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 5.0

    tsm: AnalysisConfig = field(default_factory=AnalysisConfig)
    lock_phases: bool = False
    splice_alphas: tuple[float, ...] = ()
    train_time_splice: bool = False

    @property
    def feature_dim(self) -> int:
        return 3 * (self.frame.cepstral_order + 1) + 3

    def to_dict(self) -> dict:
        return asdict(self)


def paper_scale() -> PipelineConfig:
    # 49th-order LPC needs at least 51 band-spectrum samples per frame
    return PipelineConfig(
        profile="paper-scale",
        frame=FrameConfig(cepstral_order=49, num_channels=52),
        context_frames=11,
        corpus=CorpusConfig(train=0, dev=0, test=0, duration_s=0.0),
        bn_hidden_sizes=(512, 512, 512, 512),
        bn_bottleneck=512,
        bn_targets=6294,
        bn_lr=0.001,
        bn_epochs=50,
        bn_batch=256,
        cls_lstm_size=512,
        cls_relu_size=1024,
        num_languages=10,
        cls_lr=0.0002,
        cls_epochs=50,
        cls_batch=256,
        splice_alphas=(0.8, 1.2),
    )


PROFILES = {
    "desk-scale": PipelineConfig,
    "paper-scale": paper_scale,
}

_SECTION_FIELDS = {
    "frame": ("sample_rate", "frame_length_s", "frame_step_s", "preemphasis",
              "cepstral_order", "num_channels", "pitch_min_hz", "pitch_max_hz"),
    "block": ("block_length", "block_step"),
    "corpus": ("train", "dev", "test", "duration_s"),
    "tsm": ("frame_length", "fft_size", "hop_out"),
    "bn": ("hidden_sizes", "bottleneck", "targets", "lr", "epochs", "batch"),
    "classifier": ("lstm_size", "relu_size", "languages", "lr", "epochs", "batch"),
}
_TOP_LEVEL = ("profile", "seed", "sample_rate", "context_frames", "vad_k",
              "splice_alphas", "lock_phases", "train_time_splice", "grad_clip")


def _reject_unknown(given: dict, allowed: tuple[str, ...], where: str) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def resolve_config(profile: str = "desk-scale",
                   overrides: dict | None = None) -> PipelineConfig:
    """Instantiate a profile and apply a parsed override mapping."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; "
                          f"choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    if not overrides:
        return cfg

    data = dict(overrides)
    _reject_unknown(data, _TOP_LEVEL + tuple(_SECTION_FIELDS), "config")
    for section, allowed in _SECTION_FIELDS.items():
        if section in data and not isinstance(data[section], dict):
            raise ConfigError(f"[{section}] must be a table")
        _reject_unknown(data.get(section, {}), allowed, f"[{section}]")

    top = {k: v for k, v in data.items() if k in _TOP_LEVEL and k != "profile"}
    if "splice_alphas" in top:
        top["splice_alphas"] = tuple(float(a) for a in top["splice_alphas"])
    cfg = replace(cfg, **top)

    if "frame" in data:
        cfg = replace(cfg, frame=replace(cfg.frame, **data["frame"]))
    if "block" in data:
        cfg = replace(cfg, block=replace(cfg.block, **data["block"]))
    if "corpus" in data:
        cfg = replace(cfg, corpus=replace(cfg.corpus, **data["corpus"]))
    if "tsm" in data:
        cfg = replace(cfg, tsm=replace(cfg.tsm, **data["tsm"]))
    if "bn" in data:
        bn = data["bn"]
        rename = {"hidden_sizes": "bn_hidden_sizes", "bottleneck": "bn_bottleneck",
                  "targets": "bn_targets", "lr": "bn_lr", "epochs": "bn_epochs",
                  "batch": "bn_batch"}
        fields = {rename[k]: tuple(v) if k == "hidden_sizes" else v
                  for k, v in bn.items()}
        cfg = replace(cfg, **fields)
    if "classifier" in data:
        cls = data["classifier"]
        rename = {"lstm_size": "cls_lstm_size", "relu_size": "cls_relu_size",
                  "languages": "num_languages", "lr": "cls_lr",
                  "epochs": "cls_epochs", "batch": "cls_batch"}
        cfg = replace(cfg, **{rename[k]: v for k, v in cls.items()})
    return cfg


def load_config(path: str | os.PathLike | None = None,
                profile: str | None = None) -> PipelineConfig:
    """Read a TOML config file; an explicit --profile beats the file's."""
    overrides: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                overrides = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"bad config file {path}: {exc}") from None
    chosen = profile or overrides.get("profile", "desk-scale")
    return resolve_config(chosen, overrides)


def config_fingerprint(cfg: PipelineConfig) -> str:
    """Short stable hash of the fully resolved configuration."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
