"""Pipeline orchestration: the two training stages, bottleneck
extraction, utterance scoring, and the on-disk stage drivers the CLI
calls.

Stage artifacts live under one run directory:

    run/corpus/       WAVs + manifest.jsonl + corpus_meta.json
    run/features/     per-utterance archives, frame_labels.jsonl, cmvn.json
    run/bnfeats/      bottleneck feature archives
    run/checkpoints/  bn*.ckpt, lid*.ckpt (one per epoch + final)
    run/scores/       per-condition JSONL trial scores
    run/reports/      metrics.json and stage reports
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lidkit import blocking, corpus, metrics, nnet, optim
from lidkit.audio import Waveform, read_wav
from lidkit.checkpoint import (load_bn_dnn, load_classifier, save_bn_dnn,
                               save_classifier)
from lidkit.config import PipelineConfig, config_fingerprint
from lidkit.errors import LidKitError, ShapeError, TrainingDivergedError
from lidkit.features import (CmvnStats, FeatureMatrix, apply_cmvn, energy_vad,
                             estimate_cmvn, plp_pitch_features, read_features,
                             splice_context, write_features)
from lidkit.tsm import splice_rates


@dataclass
class RunPaths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    @property
    def features_dir(self) -> Path:
        return self.root / "features"

    @property
    def bnfeats_dir(self) -> Path:
        return self.root / "bnfeats"

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def scores_dir(self) -> Path:
        return self.root / "scores"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def bn_checkpoint(self) -> Path:
        return self.checkpoints_dir / "bn.ckpt"

    @property
    def lid_checkpoint(self) -> Path:
        return self.checkpoints_dir / "lid.ckpt"

    @property
    def cmvn_file(self) -> Path:
        return self.features_dir / "cmvn.json"

    @property
    def labels_file(self) -> Path:
        return self.features_dir / "frame_labels.jsonl"


@dataclass
class TrainedModels:
    bn: nnet.BnDnn
    classifier: nnet.Classifier
    cmvn: CmvnStats
    languages: list[str]


def load_models(paths: RunPaths) -> TrainedModels:
    manifest = corpus.load_manifest(paths.corpus_dir)
    return TrainedModels(
        bn=load_bn_dnn(paths.bn_checkpoint),
        classifier=load_classifier(paths.lid_checkpoint),
        cmvn=load_cmvn(paths.cmvn_file),
        languages=manifest.languages,
    )


# ---------------------------------------------------------------------------
# In-memory operations
# ---------------------------------------------------------------------------

def _batches(n: int, size: int, perm: np.ndarray):
    for lo in range(0, n, size):
        yield perm[lo : lo + size]


def train_bn_dnn(x: np.ndarray, y: np.ndarray, num_targets: int,
                 cfg: PipelineConfig, seed: int,
                 checkpoint_dir: Path | None = None
                 ) -> tuple[nnet.BnDnn, list[float]]:
    """SGD / cross-entropy training of the phone classifier. Returns the
    model and per-epoch mean losses; writes one checkpoint per epoch."""
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} feature rows vs {len(y)} labels")
    rng = np.random.default_rng(seed)
    dnn = nnet.init_bn_dnn(rng, x.shape[1], cfg.bn_hidden_sizes,
                           cfg.bn_bottleneck, num_targets)
    params = dnn.parameters()
    history: list[float] = []
    for epoch in range(cfg.bn_epochs):
        perm = rng.permutation(len(x))
        losses = []
        for batch in _batches(len(x), cfg.bn_batch, perm):
            loss, grads = nnet.bn_dnn_loss_and_grads(dnn, x[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"BN training diverged at epoch {epoch + 1}")
            if cfg.grad_clip:
                optim.clip_gradients(grads, cfg.grad_clip)
            optim.sgd_step(params, grads, cfg.bn_lr)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if checkpoint_dir is not None:
            save_bn_dnn(checkpoint_dir / f"bn_epoch_{epoch + 1:03d}.ckpt", dnn)
    return dnn, history


def train_lid(blocks_arr: np.ndarray, y: np.ndarray, num_languages: int,
              cfg: PipelineConfig, seed: int,
              checkpoint_dir: Path | None = None
              ) -> tuple[nnet.Classifier, list[float]]:
    """Adam / cross-entropy training of the block-level language
    classifier; the bottleneck extractor is not an input and stays
    untouched (frozen-stage contract)."""
    if len(blocks_arr) != len(y):
        raise ShapeError(f"{len(blocks_arr)} blocks vs {len(y)} labels")
    rng = np.random.default_rng(seed)
    model = nnet.init_classifier(rng, blocks_arr.shape[2], cfg.cls_lstm_size,
                                 cfg.cls_relu_size, num_languages)
    params = model.parameters()
    state = optim.adam_init(params)
    history: list[float] = []
    for epoch in range(cfg.cls_epochs):
        perm = rng.permutation(len(blocks_arr))
        losses = []
        for batch in _batches(len(blocks_arr), cfg.cls_batch, perm):
            loss, grads = nnet.classifier_loss_and_grads(
                model, blocks_arr[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"LID training diverged at epoch {epoch + 1}")
            if cfg.grad_clip:
                optim.clip_gradients(grads, cfg.grad_clip)
            optim.adam_step(params, grads, state, cfg.cls_lr, cfg.adam_beta1,
                            cfg.adam_beta2, cfg.adam_eps)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if checkpoint_dir is not None:
            save_classifier(checkpoint_dir / f"lid_epoch_{epoch + 1:03d}.ckpt",
                            model)
    return model, history


def extract_bn(feats: FeatureMatrix, dnn: nnet.BnDnn,
               context: int) -> FeatureMatrix:
    """Context-spliced frames through the DNN up to the linear
    bottleneck; frame count is preserved."""
    spliced = splice_context(feats, context)
    _, bottleneck = nnet.dnn_forward(dnn, spliced.values)
    return FeatureMatrix(values=bottleneck.astype(np.float32),
                         frame_rate=feats.frame_rate,
                         utterance_id=feats.utterance_id,
                         language=feats.language)


def front_end(w: Waveform, cfg: PipelineConfig) -> tuple[FeatureMatrix, np.ndarray]:
    """PLP+pitch features with the VAD keep-mask already applied;
    returns the features and the mask (for aligning frame labels)."""
    feats = plp_pitch_features(w, cfg.frame)
    mask = energy_vad(w, cfg.frame, cfg.vad_k)
    kept = FeatureMatrix(values=feats.values[mask], frame_rate=feats.frame_rate,
                         utterance_id=feats.utterance_id)
    return kept, mask


def bn_frame_accuracy(dnn: nnet.BnDnn, x: np.ndarray, y: np.ndarray) -> float:
    log_probs, _ = nnet.dnn_forward(dnn, x)
    return float(np.mean(log_probs.argmax(axis=1) == y))


def block_accuracy(model: nnet.Classifier, blocks_arr: np.ndarray,
                   y: np.ndarray) -> float:
    log_probs = nnet.classifier_forward(model, blocks_arr)
    return float(np.mean(log_probs.argmax(axis=1) == y))


def score_utterance(w: Waveform, models: TrainedModels, cfg: PipelineConfig,
                    splice_alphas: tuple[float, ...] = ()
                    ) -> tuple[np.ndarray, dict]:
    """Mean per-block log-likelihood vector for one utterance.

    Waveform-level TSM splicing happens first (empty tuple = none),
    then VAD, CMVN with the training statistics, context splicing,
    bottleneck extraction, blocking, and the LSTM classifier.
    """
    if splice_alphas:
        w = splice_rates(w, splice_alphas, cfg.tsm, cfg.lock_phases)
    feats, mask = front_end(w, cfg)
    silent_guard = int(mask.sum()) <= 1
    normalized = apply_cmvn(feats, models.cmvn)
    bn = extract_bn(normalized, models.bn, cfg.context_frames)
    blocks = blocking.make_blocks(bn, cfg.block)
    stacked = np.stack([b.values for b in blocks])
    log_probs = nnet.classifier_forward(models.classifier, stacked)
    scores = log_probs.mean(axis=0)
    info = {"num_blocks": len(blocks), "silent_guard": silent_guard}
    return scores, info


# ---------------------------------------------------------------------------
# Stage drivers (artifacts on disk)
# ---------------------------------------------------------------------------

def stage_synth_corpus(paths: RunPaths, cfg: PipelineConfig,
                       recipes: list[corpus.SynthLanguageRecipe] | None = None
                       ) -> corpus.CorpusManifest:
    recipes = recipes or corpus.default_recipes()
    return corpus.synth_corpus(
        recipes, cfg.corpus.per_split_counts, cfg.corpus.duration_s,
        cfg.seed, paths.corpus_dir, cfg.sample_rate)


def _featurize_one(args) -> tuple[str, np.ndarray, np.ndarray]:
    wav_path, cfg = args
    w = read_wav(wav_path)
    feats = plp_pitch_features(w, cfg.frame)
    mask = energy_vad(w, cfg.frame, cfg.vad_k)
    return str(wav_path), feats.values[mask], mask


def stage_featurize(paths: RunPaths, cfg: PipelineConfig, jobs: int = 1) -> None:
    """Front-end features for every manifest entry plus VAD-aligned frame
    labels and the train-split CMVN statistics."""
    manifest = corpus.load_manifest(paths.corpus_dir)
    paths.features_dir.mkdir(parents=True, exist_ok=True)

    work = [(manifest.wav_path(e), cfg) for e in manifest.entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_featurize_one, work, chunksize=4))
    else:
        results = [_featurize_one(item) for item in work]

    train_matrices = []
    with open(paths.labels_file, "w", encoding="utf-8") as label_fh:
        for entry, (_, values, mask) in zip(manifest.entries, results):
            feats = FeatureMatrix(values=values, frame_rate=cfg.frame.frame_rate,
                                  utterance_id=entry.utterance_id)
            write_features(feats, paths.features_dir / f"{entry.utterance_id}.feat")
            labels = corpus.frame_labels(entry.phone_segments, len(mask), cfg.frame)
            label_fh.write(json.dumps({
                "utterance_id": entry.utterance_id,
                "labels": [int(v) for v in labels[mask]],
            }, sort_keys=True) + "\n")
            if entry.split == "train":
                train_matrices.append(feats)

    stats = estimate_cmvn(train_matrices)
    save_cmvn(stats, paths.cmvn_file)


def save_cmvn(stats: CmvnStats, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({
            "mean": stats.mean.tolist(),
            "variance": stats.variance.tolist(),
            "frame_count": stats.frame_count,
            "floored_dims": list(stats.floored_dims),
        }, fh, sort_keys=True)


def load_cmvn(path: str | os.PathLike) -> CmvnStats:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return CmvnStats(mean=np.asarray(data["mean"]),
                     variance=np.asarray(data["variance"]),
                     frame_count=data["frame_count"],
                     floored_dims=tuple(data["floored_dims"]))


def load_frame_labels(paths: RunPaths) -> dict[str, np.ndarray]:
    labels: dict[str, np.ndarray] = {}
    with open(paths.labels_file, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            labels[rec["utterance_id"]] = np.asarray(rec["labels"], dtype=np.int64)
    return labels


def build_frame_dataset(paths: RunPaths, cfg: PipelineConfig, split: str
                        ) -> tuple[np.ndarray, np.ndarray]:
    """CMVN-normalized, context-spliced frames with phone labels."""
    manifest = corpus.load_manifest(paths.corpus_dir)
    cmvn = load_cmvn(paths.cmvn_file)
    labels = load_frame_labels(paths)
    xs, ys = [], []
    for entry in manifest.by_split(split):
        feats = read_features(paths.features_dir / f"{entry.utterance_id}.feat")
        spliced = splice_context(apply_cmvn(feats, cmvn), cfg.context_frames)
        y = labels[entry.utterance_id]
        if len(y) != spliced.num_frames:
            raise ShapeError(
                f"{entry.utterance_id}: {len(y)} labels vs "
                f"{spliced.num_frames} frames")
        xs.append(spliced.values)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def stage_train_bn(paths: RunPaths, cfg: PipelineConfig) -> dict:
    manifest = corpus.load_manifest(paths.corpus_dir)
    num_targets = cfg.bn_targets or manifest.num_phone_classes
    x, y = build_frame_dataset(paths, cfg, "train")
    paths.checkpoints_dir.mkdir(parents=True, exist_ok=True)
    dnn, history = train_bn_dnn(x, y, num_targets, cfg, cfg.seed,
                                paths.checkpoints_dir)
    save_bn_dnn(paths.bn_checkpoint, dnn)

    dev_x, dev_y = build_frame_dataset(paths, cfg, "dev")
    report = {
        "stage": "train-bn",
        "epoch_loss": history,
        "train_frames": int(len(x)),
        "dev_frame_accuracy": bn_frame_accuracy(dnn, dev_x, dev_y),
        "num_targets": int(num_targets),
        "config_fingerprint": config_fingerprint(cfg),
    }
    _write_report(paths, "train_bn.json", report)
    return report


def stage_extract_bn(paths: RunPaths, cfg: PipelineConfig) -> None:
    manifest = corpus.load_manifest(paths.corpus_dir)
    cmvn = load_cmvn(paths.cmvn_file)
    dnn = load_bn_dnn(paths.bn_checkpoint)
    paths.bnfeats_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        feats = read_features(paths.features_dir / f"{entry.utterance_id}.feat")
        bn = extract_bn(apply_cmvn(feats, cmvn), dnn, cfg.context_frames)
        write_features(bn, paths.bnfeats_dir / f"{entry.utterance_id}.feat")


def build_block_dataset(paths: RunPaths, cfg: PipelineConfig, split: str,
                        splice_alphas: tuple[float, ...] = ()
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Bottleneck-feature blocks with language labels. With a non-empty
    splice list the waveforms are TSM-spliced and the whole front end is
    recomputed instead of reading the stored archives."""
    manifest = corpus.load_manifest(paths.corpus_dir)
    lang_index = {lang: i for i, lang in enumerate(manifest.languages)}
    if splice_alphas:
        cmvn = load_cmvn(paths.cmvn_file)
        dnn = load_bn_dnn(paths.bn_checkpoint)
    blocks, labels = [], []
    for entry in manifest.by_split(split):
        if splice_alphas:
            w = read_wav(manifest.wav_path(entry))
            w = splice_rates(w, splice_alphas, cfg.tsm, cfg.lock_phases)
            feats, _ = front_end(w, cfg)
            feats = extract_bn(apply_cmvn(feats, cmvn), dnn, cfg.context_frames)
        else:
            feats = read_features(paths.bnfeats_dir / f"{entry.utterance_id}.feat")
        for block in blocking.make_blocks(feats, cfg.block,
                                          label=lang_index[entry.language]):
            blocks.append(block.values)
            labels.append(block.label)
    return np.stack(blocks), np.asarray(labels, dtype=np.int64)


def stage_train_lid(paths: RunPaths, cfg: PipelineConfig) -> dict:
    manifest = corpus.load_manifest(paths.corpus_dir)
    num_languages = cfg.num_languages or len(manifest.languages)
    train_alphas = cfg.splice_alphas if cfg.train_time_splice else ()
    blocks_arr, y = build_block_dataset(paths, cfg, "train", train_alphas)
    paths.checkpoints_dir.mkdir(parents=True, exist_ok=True)
    model, history = train_lid(blocks_arr, y, num_languages, cfg, cfg.seed,
                               paths.checkpoints_dir)
    save_classifier(paths.lid_checkpoint, model)

    dev_blocks, dev_y = build_block_dataset(paths, cfg, "dev")
    report = {
        "stage": "train-lid",
        "epoch_loss": history,
        "train_blocks": int(len(blocks_arr)),
        "dev_block_accuracy": block_accuracy(model, dev_blocks, dev_y),
        "num_languages": int(num_languages),
        "config_fingerprint": config_fingerprint(cfg),
    }
    _write_report(paths, "train_lid.json", report)
    return report


_SCORE_CACHE: dict = {}


def _score_one(args) -> dict:
    wav_path, entry_id, true_language, cfg, run_root, splice_alphas = args
    key = str(run_root)
    if key not in _SCORE_CACHE:
        _SCORE_CACHE[key] = load_models(RunPaths(Path(run_root)))
    models = _SCORE_CACHE[key]
    w = read_wav(wav_path)
    scores, info = score_utterance(w, models, cfg, splice_alphas)
    best = int(np.argmax(scores))
    return {
        "utterance_id": entry_id,
        "true_language": true_language,
        "scores": {lang: float(s) for lang, s in zip(models.languages, scores)},
        "predicted": models.languages[best],
        **info,
    }


def stage_score(paths: RunPaths, cfg: PipelineConfig, split: str,
                splice_alphas: tuple[float, ...] = (),
                output_name: str | None = None, jobs: int = 1) -> Path:
    """Score every utterance of a split; one JSONL record each."""
    manifest = corpus.load_manifest(paths.corpus_dir)
    entries = manifest.by_split(split)
    if not entries:
        raise LidKitError(f"no utterances in split {split!r}", code="empty-split")

    work = [(manifest.wav_path(e), e.utterance_id, e.language, cfg,
             str(paths.root), splice_alphas) for e in entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_score_one, work, chunksize=2))
    else:
        records = [_score_one(item) for item in work]

    paths.scores_dir.mkdir(parents=True, exist_ok=True)
    if output_name is None:
        suffix = "_tsm" + "-".join(f"{a:g}" for a in splice_alphas) \
            if splice_alphas else ""
        output_name = f"{split}{suffix}.jsonl"
    out_path = paths.scores_dir / output_name
    fingerprint = config_fingerprint(cfg)
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in records:
            record = {**record, "split": split,
                      "splice_alphas": list(splice_alphas),
                      "config_fingerprint": fingerprint}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return out_path


def trials_from_score_file(path: str | os.PathLike,
                           languages: list[str]) -> metrics.TrialScores:
    ids, labels, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            ids.append(rec["utterance_id"])
            labels.append(rec["true_language"])
            rows.append([rec["scores"][lang] for lang in languages])
    if not ids:
        raise LidKitError(f"empty score file {path}", code="empty-score-file")
    return metrics.TrialScores(utterance_ids=ids, languages=list(languages),
                               true_labels=labels, scores=np.asarray(rows))


def stage_evaluate(paths: RunPaths, score_files: list[Path] | None = None) -> dict:
    """Metric report over one or more score files (one table row each)."""
    manifest = corpus.load_manifest(paths.corpus_dir)
    if score_files is None:
        score_files = sorted(paths.scores_dir.glob("*.jsonl"))
    if not score_files:
        raise LidKitError("no score files to evaluate", code="missing-scores")
    report: dict = {"conditions": {}}
    for path in score_files:
        trials = trials_from_score_file(path, manifest.languages)
        report["conditions"][Path(path).stem] = metrics.evaluate_trials(trials)
    _write_report(paths, "metrics.json", report)
    return report


def _write_report(paths: RunPaths, name: str, payload: dict) -> None:
    paths.reports_dir.mkdir(parents=True, exist_ok=True)
    with open(paths.reports_dir / name, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
