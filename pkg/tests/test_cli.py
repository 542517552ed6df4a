import json

import numpy as np
import pytest

from lidkit.audio import Waveform, read_wav, write_wav
from lidkit.cli import main
from conftest import sine

MINI_TOML = """
seed = 21
[corpus]
train = 4
dev = 2
test = 2
duration_s = 1.5
[frame]
cepstral_order = 8
num_channels = 12
[block]
block_length = 40
block_step = 20
[bn]
hidden_sizes = [16]
bottleneck = 8
epochs = 3
lr = 0.4
batch = 64
[classifier]
lstm_size = 8
relu_size = 12
epochs = 3
lr = 0.01
batch = 8
"""


@pytest.fixture(scope="module")
def mini_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "mini.toml"
    path.write_text(MINI_TOML)
    return path


def test_tsm_subcommand(tmp_path, rng):
    src = tmp_path / "in.wav"
    dst = tmp_path / "out.wav"
    write_wav(Waveform(rng.normal(size=16000) * 0.2, 16000), src)
    assert main(["tsm", "--alpha", "1.0", str(src), str(dst)]) == 0
    out = read_wav(dst)
    assert abs(len(out) - 16000) <= 2048  # within one frame at alpha=1


def test_splice_subcommand(tmp_path):
    src = tmp_path / "in.wav"
    dst = tmp_path / "out.wav"
    write_wav(sine(300.0), src)
    assert main(["splice", "--alphas", "0.8,1.2", str(src), str(dst)]) == 0
    out = read_wav(dst)
    approx = 16000 + 16000 / 0.8 + 16000 / 1.2
    assert abs(len(out) - approx) <= 3 * 2048


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "OK" in out


def test_full_pipeline_via_cli(tmp_path, mini_cfg_file, capsys):
    run = tmp_path / "run"
    cfg = ["--config", str(mini_cfg_file)]
    for stage in (["synth-corpus", "--run", str(run)],
                  ["featurize", "--run", str(run)],
                  ["train-bn", "--run", str(run)],
                  ["extract-bn", "--run", str(run)],
                  ["train-lid", "--run", str(run)]):
        assert main(stage + cfg) == 0, stage

    assert main(["score", "--run", str(run), "--split", "test"] + cfg) == 0
    assert main(["score", "--run", str(run), "--split", "test_1s",
                 "--splice-alphas", "0.8,1.2"] + cfg) == 0
    assert main(["evaluate", "--run", str(run)] + cfg) == 0
    table = capsys.readouterr().out
    assert "test_1s_tsm0.8-1.2" in table

    metrics_path = run / "reports" / "metrics.json"
    report = json.loads(metrics_path.read_text())
    for condition in ("test", "test_1s_tsm0.8-1.2"):
        cond = report["conditions"][condition]
        for key in ("cavg_min_sweep", "cavg_fixed_log_odds", "eer_pooled",
                    "accuracy", "num_trials", "threshold_policies"):
            assert key in cond

    # stage outputs validate as next-stage inputs; artifacts all exist
    assert (run / "corpus" / "manifest.jsonl").exists()
    assert (run / "features" / "cmvn.json").exists()
    assert (run / "checkpoints" / "bn.ckpt").exists()
    assert (run / "checkpoints" / "lid.ckpt").exists()


def test_cli_machine_readable_error(tmp_path, capsys):
    rc = main(["featurize", "--run", str(tmp_path / "nonexistent")])
    assert rc == 2
    err = capsys.readouterr().err
    payload = json.loads(err.strip())
    assert payload["error"] == "missing-corpus"


def test_cli_rejects_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("mystery_knob = 3\n")
    rc = main(["synth-corpus", "--run", str(tmp_path / "r"),
               "--config", str(bad)])
    assert rc == 2
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["error"] == "config-error"
    assert "mystery_knob" in payload["message"]


def test_cli_rejects_missing_wav(capsys):
    rc = main(["tsm", "--alpha", "1.2", "/no/input.wav", "/tmp/out.wav"])
    assert rc == 2
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["error"] == "missing-file"
