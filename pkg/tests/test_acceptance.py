"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line. The end-to-end criteria share one toy-corpus run per seed."""

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import toeplitz

import conftest
from lidkit.audio import Waveform, read_wav
from lidkit.blocking import BlockConfig, make_blocks
from lidkit.config import PipelineConfig
from lidkit.dsp import AnalysisConfig, istft, stft
from lidkit.features import FeatureMatrix, levinson
from lidkit.gradcheck import gradcheck_classifier
from lidkit.metrics import DetectionCounts, TrialScores, cavg, \
    decisions_from_scores, eer
from lidkit.nnet import LstmLayer, LstmState, lstm_cell_forward
from lidkit.pipeline import (RunPaths, stage_extract_bn, stage_featurize,
                             stage_score, stage_synth_corpus, stage_train_bn,
                             stage_train_lid)
from lidkit.tsm import StretchSpec, time_stretch

FRAME = 2048
ALPHAS = (0.7, 0.8, 0.9, 1.1, 1.2, 1.3)
SPLICE_COMBOS = ((0.8, 1.2), (1.1, 1.2), (0.8, 0.9), (0.7, 1.3))


@contextmanager
def criterion(num: int, description: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] criterion {num:2d} FAIL - {description}")
        raise
    elapsed = time.perf_counter() - start
    print(f"\n[ACCEPTANCE] criterion {num:2d} PASS - {description} "
          f"({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 1. TSM length contract
# ---------------------------------------------------------------------------

def test_criterion_1_tsm_length_contract():
    with criterion(1, "TSM length contract |len(y) - len(x)/alpha| <= 2048"):
        start = time.perf_counter()
        rng = np.random.default_rng(100)
        for _ in range(50):
            n = int(rng.uniform(0.5, 5.0) * 16000)
            x = Waveform(rng.normal(size=n) * 0.2, 16000)
            for alpha in ALPHAS:
                y = time_stretch(x, StretchSpec(alpha=alpha))
                assert abs(len(y) - n / alpha) <= FRAME, (n, alpha, len(y))
        assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------------------
# 2. TSM identity / reconstruction
# ---------------------------------------------------------------------------

def test_criterion_2_identity_round_trips():
    with criterion(2, "alpha=1 SNR >= 40 dB; STFT/ISTFT round trip >= 60 dB"):
        start = time.perf_counter()
        rng = np.random.default_rng(200)
        x = rng.normal(size=32000) * 0.2

        y = time_stretch(Waveform(x, 16000), StretchSpec(alpha=1.0)).samples
        n = min(len(x), len(y))
        inner = slice(FRAME, n - FRAME)
        identity_snr = conftest.snr_db(x[inner], y[inner])
        assert identity_snr >= 40.0

        for hop in (512, 256):
            cfg = AnalysisConfig(hop_in=hop, hop_out=hop)
            z = istft(stft(Waveform(x, 16000), cfg)).samples
            round_snr = conftest.snr_db(x[inner], z[inner])
            assert round_snr >= 60.0
        assert time.perf_counter() - start < 10.0
        print(f"  identity SNR {identity_snr:.1f} dB, "
              f"round trip SNR {round_snr:.1f} dB", end="")


# ---------------------------------------------------------------------------
# 3. Frequency preservation
# ---------------------------------------------------------------------------

def measured_peak_hz(samples: np.ndarray, fft_size: int = 8192) -> float:
    seg = samples[FRAME : FRAME + fft_size]
    spec = np.abs(np.fft.rfft(seg * np.hanning(len(seg)), n=fft_size))
    k = int(np.argmax(spec))
    ym, y0, yp = np.log(spec[k - 1 : k + 2] + 1e-300)
    return (k + 0.5 * (ym - yp) / (ym - 2 * y0 + yp)) * 16000 / fft_size


def test_criterion_3_frequency_preservation():
    with criterion(3, "pure-tone dominant peak moves < 1% for all alpha"):
        worst = 0.0
        for freq in (100.0, 250.0, 440.0, 1000.0, 2000.0, 3150.0, 4000.0):
            tone = conftest.sine(freq, duration_s=1.0)
            for alpha in ALPHAS:
                y = time_stretch(tone, StretchSpec(alpha=alpha)).samples
                deviation = abs(measured_peak_hz(y) - freq) / freq
                worst = max(worst, deviation)
                assert deviation < 0.01, (freq, alpha, deviation)
        print(f"  worst relative deviation {worst:.2e}", end="")


# ---------------------------------------------------------------------------
# 4. LSTM correctness
# ---------------------------------------------------------------------------

def test_criterion_4_lstm_gradients_and_oracle():
    with criterion(4, "classifier gradcheck <= 1e-4; scalar cell oracle 1e-6"):
        start = time.perf_counter()
        result = gradcheck_classifier(seed=0, input_dim=3, lstm_size=4,
                                      relu_size=6, num_classes=3,
                                      block_length=5, batch=2)
        assert result.max_relative_error <= 1e-4

        import math
        layer = LstmLayer(wf=np.ones((1, 3)), wi=np.ones((1, 3)),
                          wc=np.ones((1, 2)), wo=np.ones((1, 3)),
                          bf=np.zeros(1), bi=np.zeros(1), bc=np.zeros(1),
                          bo=np.zeros(1))
        state, gates = lstm_cell_forward(
            np.array([0.0]), LstmState(c=np.array([1.0]), h=np.array([0.0])),
            layer)
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))
        f = sig(1.0)
        c = f * 1.0 + sig(1.0) * math.tanh(0.0)
        o = sig(c)
        h = math.tanh(c) * o
        assert abs(gates["f"][0] - f) < 1e-6
        assert abs(state.c[0] - c) < 1e-6
        assert abs(gates["o"][0] - o) < 1e-6
        assert abs(state.h[0] - h) < 1e-6
        assert time.perf_counter() - start < 60.0
        print(f"  max relative gradient error {result.max_relative_error:.2e}",
              end="")


# ---------------------------------------------------------------------------
# 5. Blocking rules
# ---------------------------------------------------------------------------

def test_criterion_5_blocking_enumeration():
    with criterion(5, "blocking matches the enumeration oracle for T=1..400"):
        start = time.perf_counter()
        cfg = BlockConfig(block_length=100, block_step=50)

        def oracle_starts(t):
            if t < 100:
                return [0]
            starts = list(range(0, t - 100 + 1, 50))
            if starts[-1] != t - 100:
                starts.append(t - 100)
            return starts

        for t in range(1, 401):
            values = np.arange(t, dtype=np.float32)[:, None]
            blocks = make_blocks(FeatureMatrix(values, 100.0), cfg)
            assert [b.start_frame for b in blocks] == oracle_starts(t), t
            assert all(b.values.shape == (100, 1) for b in blocks), t
            if t < 100:  # repeat padding: row i == input row i mod t
                expected = values[np.arange(100) % t]
                assert np.array_equal(blocks[0].values, expected), t
        assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# 6. Metrics oracles
# ---------------------------------------------------------------------------

def test_criterion_6_metric_oracles():
    with criterion(6, "C_avg / EER hand cases exact; monotone invariance"):
        start = time.perf_counter()
        langs = ["l0", "l1", "l2"]
        assert cavg(DetectionCounts(langs, np.zeros(3), np.zeros((3, 3)))) == 0.0
        assert cavg(DetectionCounts(langs, np.ones(3),
                                    np.ones((3, 3)))) == pytest.approx(1.0)
        assert cavg(DetectionCounts(langs, np.full(3, 0.5),
                                    np.full((3, 3), 0.5))) == pytest.approx(0.5)

        assert eer([0.9, 0.8], [0.1, 0.2]) == 0.0
        assert eer([0.1, 0.2], [0.9, 0.8]) == 1.0
        assert eer([0.8, 0.4], [0.6, 0.2]) == pytest.approx(0.5)

        rng = np.random.default_rng(600)
        for _ in range(100):
            targets = rng.normal(size=10)
            nontargets = rng.normal(size=15)
            transform = lambda s: np.exp(0.3 * s) + 11.0
            assert eer(transform(targets), transform(nontargets)) == \
                pytest.approx(eer(targets, nontargets), abs=1e-12)

            matrix = rng.normal(size=(9, 3))
            labels = [langs[i % 3] for i in range(9)]
            ids = [f"u{i}" for i in range(9)]
            plain = decisions_from_scores(
                TrialScores(ids, langs, labels, matrix))
            warped = decisions_from_scores(
                TrialScores(ids, langs, labels, transform(matrix)))
            assert cavg(plain) == pytest.approx(cavg(warped), abs=1e-12)
        assert time.perf_counter() - start < 10.0


# ---------------------------------------------------------------------------
# 7. Levinson-Durbin vs dense solve
# ---------------------------------------------------------------------------

def test_criterion_7_levinson_vs_dense():
    with criterion(7, "Levinson-Durbin == dense Toeplitz solve to 1e-8"):
        start = time.perf_counter()
        rng = np.random.default_rng(700)
        worst = 0.0
        for _ in range(200):
            order = int(rng.integers(1, 21))
            sig = rng.normal(size=160)
            r = np.correlate(sig, sig, "full")[159 : 159 + order + 1]
            r[0] *= 1.0 + 1e-9
            a, _ = levinson(r)
            dense = np.linalg.solve(toeplitz(r[:order]), -r[1 : order + 1])
            worst = max(worst, float(np.abs(a - dense).max()))
        assert worst <= 1e-8
        assert time.perf_counter() - start < 5.0
        print(f"  worst coefficient gap {worst:.2e}", end="")


# ---------------------------------------------------------------------------
# 8.-10. End-to-end toy experiment
# ---------------------------------------------------------------------------

def run_toy_pipeline(root, seed: int) -> dict:
    cfg = replace(PipelineConfig(), seed=seed)
    paths = RunPaths(root)
    timings = {}
    t0 = time.perf_counter()
    stage_synth_corpus(paths, cfg)
    stage_featurize(paths, cfg)
    bn_report = stage_train_bn(paths, cfg)
    stage_extract_bn(paths, cfg)
    bn_checksum_before = hashlib.sha256(
        paths.bn_checkpoint.read_bytes()).hexdigest()
    lid_report = stage_train_lid(paths, cfg)
    bn_checksum_after = hashlib.sha256(
        paths.bn_checkpoint.read_bytes()).hexdigest()
    timings["train"] = time.perf_counter() - t0
    return {
        "paths": paths, "cfg": cfg, "bn_report": bn_report,
        "lid_report": lid_report, "timings": timings,
        "bn_checksum_before": bn_checksum_before,
        "bn_checksum_after": bn_checksum_after,
    }


def split_accuracy(score_file) -> float:
    total = correct = 0
    with open(score_file, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            total += 1
            correct += rec["predicted"] == rec["true_language"]
    return correct / total


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    """Full pipeline for three seeds; seed[0] also scores the full test
    conditions for criterion 8."""
    runs = []
    for seed in (12345, 777, 888):
        root = tmp_path_factory.mktemp(f"toy_{seed}")
        runs.append(run_toy_pipeline(root, seed))
    return runs


def test_criterion_8_end_to_end(toy_runs):
    with criterion(8, "toy pipeline >= 90% on test, >= 70% on test_1s, "
                      "< 10 min, deterministic"):
        run = toy_runs[0]
        paths, cfg = run["paths"], run["cfg"]
        t0 = time.perf_counter()
        acc = {}
        for split in ("test", "test_3s", "test_1s"):
            acc[split] = split_accuracy(stage_score(paths, cfg, split))
        elapsed = run["timings"]["train"] + (time.perf_counter() - t0)

        assert run["bn_report"]["dev_frame_accuracy"] >= 0.80
        losses = run["bn_report"]["epoch_loss"]
        assert all(b <= a * 1.05 for a, b in zip(losses, losses[1:])), losses
        assert acc["test"] >= 0.90
        assert acc["test_1s"] >= 0.70
        assert elapsed < 600.0

        # scoring determinism: identical bytes on a rerun
        first = stage_score(paths, cfg, "test", output_name="det_a.jsonl")
        second = stage_score(paths, cfg, "test", output_name="det_b.jsonl")
        assert first.read_bytes() == second.read_bytes()
        print(f"  acc test={acc['test']:.2f} 3s={acc['test_3s']:.2f} "
              f"1s={acc['test_1s']:.2f}, dev frames "
              f"{run['bn_report']['dev_frame_accuracy']:.2f}, "
              f"{elapsed:.0f}s", end="")


def test_criterion_9_tsm_splice_directional(toy_runs):
    with criterion(9, "test_1s accuracy with splice (0.8,1.2) >= no-TSM - 2pp "
                      "over 3 seeds"):
        table = {}
        none_accs, tsm_accs = [], []
        for run in toy_runs:
            paths, cfg = run["paths"], run["cfg"]
            seed = cfg.seed
            base = split_accuracy(stage_score(paths, cfg, "test_1s"))
            none_accs.append(base)
            table[(seed, "none")] = base
            for combo in SPLICE_COMBOS:
                acc = split_accuracy(stage_score(paths, cfg, "test_1s", combo))
                table[(seed, combo)] = acc
                if combo == (0.8, 1.2):
                    tsm_accs.append(acc)

        print("\n  test_1s accuracy by speed-rate combination:")
        combos = ["none"] + [str(c) for c in SPLICE_COMBOS]
        print("  seed   " + "  ".join(f"{c:>10s}" for c in combos))
        for run in toy_runs:
            seed = run["cfg"].seed
            row = [table[(seed, "none")]] + [table[(seed, c)]
                                             for c in SPLICE_COMBOS]
            print(f"  {seed:<6d} " + "  ".join(f"{v:>10.3f}" for v in row))

        mean_none = float(np.mean(none_accs))
        mean_tsm = float(np.mean(tsm_accs))
        assert mean_tsm >= mean_none - 0.02, (mean_none, mean_tsm)
        print(f"  mean no-TSM {mean_none:.3f}, mean (0.8,1.2) {mean_tsm:.3f}",
              end="")


def test_criterion_10_bn_frozen_during_lid_training(toy_runs):
    with criterion(10, "BN checkpoint checksum unchanged by train_lid"):
        for run in toy_runs:
            assert run["bn_checksum_before"] == run["bn_checksum_after"]
