import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest
import torch

from dreal import oracles
from dreal.backbone import build_network
from dreal.config import ConfigError, DatasetConfig, ExperimentConfig, TrainConfig, apply_overrides, load_config
from dreal.harness.checkpoint import SCHEMA_VERSION, CheckpointError, checkpoint, restore
from dreal.harness.cli import main
from dreal.harness.data import ingest_dataset
from dreal.harness.diagnostics import (ablation_report, critique_gap, emit_plots, snapshot_attention)
from dreal.harness.experiment import CHECKPOINT_FILE, METRICS_FILE, run_experiment
from dreal.harness.metrics import MetricRecord, log_metrics, read_metrics, round_real
from dreal.trainer import make_optimizers

from helpers import toy_config

TINY = """
output_dir = "{out}"

[network]
num_blocks = 2
channels = [8, 16]
reduction_ratio = 2

[train]
epochs = {epochs}
batch_size = 16
lr = 0.05
lr_decay_epochs = [4]

[dataset]
num_classes = 4
num_train = 64
num_val = 32
image_size = 8
"""


@pytest.fixture
def tiny_config(tmp_path):
    def make(epochs=3, out="run", extra=""):
        path = tmp_path / f"{out}.toml"
        path.write_text(TINY.format(out=(tmp_path / out).as_posix(), epochs=epochs) + extra)
        return path
    return make


# config

def test_minimal_file_gets_documented_defaults(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg.network.reduction_ratio == 16
    assert cfg.reward.gamma == 1.0
    assert cfg.train.lambda_q == 1.0 and cfg.train.lambda_r == 1.0
    assert cfg.network.attention_kind == "channel"
    assert [s.channels for s in cfg.network.stages] == [16, 32, 64]
    assert cfg.network.input_shape == (16, 16, 3)


def test_negative_gamma_is_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[reward]\ngamma = -0.5\n")
    with pytest.raises(ConfigError, match="reward.gamma"):
        load_config(path)


def test_enabled_stages(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[train]\nenabled_stages = [2]\n")
    assert load_config(path).train.stages_enabled(3) == (2,)
    path.write_text("[train]\nenabled_stages = [3]\n")
    with pytest.raises(ConfigError, match="enabled_stages"):
        load_config(path)


@pytest.mark.parametrize("text,field", [
    ("[train]\nepochz = 3\n", "train.epochz"),
    ("colour = 1\n", "config.colour"),
    ("[network]\nwidth = 2\n", "network.width"),
])
def test_unknown_keys_are_rejected(tmp_path, text, field):
    path = tmp_path / "c.toml"
    path.write_text(text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == field


def test_overrides_and_round_trip(tiny_config):
    cfg = load_config(tiny_config(), ["train.seed=7", "network.attention_kind=\"style\"", "reward.gamma=0.5"])
    assert cfg.train.seed == 7 and cfg.network.attention_kind == "style" and cfg.reward.gamma == 0.5
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert apply_overrides({}, ["a.b=[1, 2]"]) == {"a": {"b": [1, 2]}}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.toml")


# data

def test_synthetic_dataset_is_class_balanced():
    splits = ingest_dataset(DatasetConfig(num_classes=4, num_train=256, num_val=64, image_size=8))
    assert splits.train.images.shape == (256, 3, 8, 8)
    assert np.bincount(splits.train.labels.numpy()).tolist() == [64] * 4
    assert torch.isfinite(splits.train.images).all()


def test_val_pipeline_is_deterministic():
    cfg = DatasetConfig(num_classes=4, num_train=64, num_val=32, image_size=8)
    a = [x for x, _ in ingest_dataset(cfg).val.batches(10, shuffle=False)]
    b = [x for x, _ in ingest_dataset(cfg).val.batches(10, shuffle=False)]
    assert all(torch.equal(p, q) for p, q in zip(a, b))
    g1, g2 = torch.Generator().manual_seed(1), torch.Generator().manual_seed(1)
    split = ingest_dataset(cfg).train
    assert all(torch.equal(p[0], q[0]) for p, q in zip(split.batches(16, g1), split.batches(16, g2)))


def test_augmentation_off_equals_val_pipeline():
    split = ingest_dataset(DatasetConfig(num_classes=4, num_train=64, num_val=8, image_size=8,
                                         augment=False)).train
    g = torch.Generator().manual_seed(0)
    assert torch.equal(split.transform(split.images, g), split.images)
    aug = ingest_dataset(DatasetConfig(num_classes=4, num_train=64, num_val=8, image_size=8)).train
    assert not torch.equal(aug.transform(aug.images, g), aug.images)


def test_missing_cifar_root_has_hint(tmp_path):
    with pytest.raises(FileNotFoundError, match="download"):
        ingest_dataset(DatasetConfig(name="cifar10", root=str(tmp_path)))


# metrics

def _record(epoch, q=0.123456789123, r=None):
    return MetricRecord(epoch=epoch, train_acc=0.5 + epoch / 7, val_acc=1 / 3, l_c=math.pi, l_q=-q,
                        l_r=2 / 3, lr=0.1, q={"s0b0": {"channel": q}}, r={"s0b0": r}, seconds=1.5)


def test_log_metrics_appends_in_order(tmp_path):
    path = tmp_path / "m.jsonl"
    for e in range(3):
        log_metrics(_record(e), path)
    rows = read_metrics(path)
    assert [r.epoch for r in rows] == [0, 1, 2]
    want = _record(0).rounded()
    want.seconds = None  # timing is opt-in
    assert rows[0] == want


def test_metrics_round_trip_bit_exact(tmp_path):
    rec = _record(4, r=-0.987654321987)
    path = tmp_path / "m.jsonl"
    log_metrics(rec, path, include_timing=True)
    back = read_metrics(path)[0]
    assert back == rec.rounded()
    assert back.q["s0b0"]["channel"] == float("%.9g" % 0.123456789123)
    assert round_real(float("nan")) is None


def test_log_metrics_write_failure_names_path(tmp_path):
    with pytest.raises(OSError, match="m.jsonl"):
        log_metrics(_record(0), tmp_path / "missing_dir" / "m.jsonl")


# experiment pipeline, diagnostics, checkpoints

def test_metrics_cover_every_enabled_block(tiny_config):
    cfg = load_config(tiny_config(extra=""), ["train.enabled_stages=[1]"])
    history = run_experiment(cfg)
    for rec in read_metrics(cfg.output_dir + "/" + METRICS_FILE):
        assert set(rec.q) == set(rec.r) == {"s1b0", "s1b1"}
    plots = sorted(p.name for p in (Path(cfg.output_dir) / "plots").iterdir())
    assert all("s0b" not in name for name in plots)
    assert len(history) == 3


def test_snapshots_untrained_and_constant():
    torch.manual_seed(0)
    net = build_network(toy_config("channel")).double()
    with torch.no_grad():
        net.block((1, 1)).attention.actors[0].fc1.weight.zero_()
    x = torch.randn(40, 3, 8, 8, dtype=torch.float64)
    snaps = snapshot_attention(net, x, batch_size=16)
    assert len(snaps) == 4
    for s in snaps:
        assert np.allclose(s.mean, 0.5, atol=0.1)
        assert (s.variance >= 0).all() and s.count == 40
    assert np.array_equal(snaps[-1].variance, np.zeros_like(snaps[-1].variance))


@pytest.mark.parametrize("kind", ["channel", "spatial_channel"])
def test_snapshots_match_two_pass_oracle(kind):
    torch.manual_seed(0)
    net = build_network(toy_config(kind)).double().eval()
    x = torch.randn(37, 3, 8, 8, dtype=torch.float64)
    snaps = snapshot_attention(net, x, batch_size=10)
    with torch.no_grad():
        _, traces = net(x)
    values = [a.values.numpy() for t in traces for a in t.actions]
    assert len(snaps) == len(values)
    for snap, v in zip(snaps, values):
        mean, var = oracles.two_pass_moments(v.reshape(len(v), -1))
        np.testing.assert_allclose(snap.mean.ravel(), mean, rtol=0, atol=1e-12)
        np.testing.assert_allclose(snap.variance.ravel(), var, rtol=0, atol=1e-12)


def test_emit_plots_counts_sidecars_and_determinism(tmp_path):
    torch.manual_seed(0)
    net = build_network(toy_config("channel")).double()
    snaps = snapshot_attention(net, torch.randn(20, 3, 8, 8, dtype=torch.float64))
    history = [_record(e, q=0.1 * e, r=0.05 * e if e % 2 else None) for e in range(4)]
    for rec in history:
        rec.q = {f"s{s}b{b}": {"channel": 0.1 * rec.epoch + s} for s in (0, 1) for b in (0, 1)}
        rec.r = {lab: (0.2 if rec.epoch % 2 else None) for lab in rec.q}
    paths = emit_plots(history, snaps, tmp_path / "a")
    names = sorted(p.name for p in paths)
    assert len([n for n in names if n.startswith("attention_") and n.endswith(".png")]) == 4
    assert len([n for n in names if n.startswith("critique_") and n.endswith(".png")]) == 4
    side = json.loads((tmp_path / "a" / "attention_s0b1.json").read_text())
    assert side["actions"]["channel"]["mean"] == snaps[1].mean.ravel().tolist()
    assert side["actions"]["channel"]["variance"] == snaps[1].variance.ravel().tolist()
    crit = json.loads((tmp_path / "a" / "critique_s1b0.json").read_text())
    assert crit["q"]["channel"] == [rec.q["s1b0"]["channel"] for rec in history]
    assert crit["r"] == [None, 0.2, None, 0.2]
    emit_plots(history, snaps, tmp_path / "b")
    for p in paths:
        if p.suffix == ".json":
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_emit_plots_empty_history_warns(tmp_path):
    with pytest.warns(UserWarning, match="empty"):
        assert emit_plots([], [], tmp_path / "p") == []
    assert not (tmp_path / "p").exists()


def test_critique_gap():
    recs = [_record(0, q=0.5, r=0.1), _record(1, q=0.5, r=None), _record(2, q=0.3, r=0.2)]
    assert critique_gap(recs, [0, 1]) == pytest.approx(0.4)
    assert critique_gap(recs, [0, 1, 2]) == pytest.approx(0.25)
    assert math.isnan(critique_gap(recs, [1]))


def test_resume_matches_uninterrupted_run(tiny_config):
    full_cfg = load_config(tiny_config(epochs=6, out="full"))
    full = run_experiment(full_cfg)
    part_cfg = load_config(tiny_config(epochs=6, out="part"))
    run_experiment(part_cfg, stop_epoch=3)
    ckpt = Path(part_cfg.output_dir) / CHECKPOINT_FILE
    assert restore(ckpt).epoch == 3
    resumed = run_experiment(part_cfg, resume=ckpt)
    assert [r.to_json() for r in resumed] == [r.to_json() for r in full]
    assert (Path(part_cfg.output_dir) / METRICS_FILE).read_bytes() == (Path(full_cfg.output_dir) / METRICS_FILE).read_bytes()


def test_checkpoint_contents_and_errors(tmp_path):
    torch.manual_seed(0)
    net = build_network(toy_config("channel"))
    opts = make_optimizers(net, TrainConfig())
    path = tmp_path / "c.pt"
    checkpoint(net, opts, 2, path)
    payload = torch.load(path, weights_only=False)
    assert payload["schema_version"] == SCHEMA_VERSION
    keys = payload["model"].keys()
    assert any(k.startswith("critics.") for k in keys) and any(".attention." in k for k in keys)
    assert any(k.startswith("stem.") for k in keys)
    assert set(payload["optimizers"]) == {"backbone", "actors", "critics"}
    state = restore(path)
    for (k, v), v2 in zip(net.state_dict().items(), state.network.state_dict().values()):
        assert torch.equal(v, v2), k
    with pytest.raises(CheckpointError, match="mismatch"):
        restore(path, build_network(toy_config("style")))
    payload["schema_version"] = 99
    torch.save(payload, path)
    with pytest.raises(CheckpointError, match="99"):
        restore(path)


def test_ablate_on_constant_attention_gives_zero_reward():
    torch.manual_seed(0)
    net = build_network(toy_config("channel"))
    with torch.no_grad():
        for a in net.actors:
            a.fc1.weight.zero_()
    split = ingest_dataset(DatasetConfig(num_classes=4, num_train=64, num_val=64, image_size=8)).val
    rows = ablation_report(net, split)
    assert [r["block"] for r in rows] == ["s0b0", "s0b1", "s1b0", "s1b1"]
    for r in rows:
        assert r["samples"] == 64
        if not math.isnan(r["max_abs_reward_correct"]):
            assert r["max_abs_reward_correct"] <= 1e-6


# CLI

def test_cli_train_is_deterministic(tiny_config, capsys):
    a, b = tiny_config(out="a"), tiny_config(out="b")
    assert main(["train", "--config", str(a), "train.seed=7"]) == 0
    assert main(["train", "--config", str(b), "train.seed=7"]) == 0
    ma = (a.parent / "a" / METRICS_FILE).read_bytes()
    assert ma == (b.parent / "b" / METRICS_FILE).read_bytes()
    assert len(ma.splitlines()) == 3


def test_cli_eval_ablate_plot(tiny_config, tmp_path, capsys):
    cfg = tiny_config(out="run")
    assert main(["train", "--config", str(cfg)]) == 0
    ckpt = tmp_path / "run" / CHECKPOINT_FILE
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["epoch"] == 3 and 0 <= out["val_acc"] <= 1
    assert main(["ablate", "--checkpoint", str(ckpt), "--out", str(tmp_path / "abl.jsonl")]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["block"] for r in rows] == ["s0b0", "s0b1", "s1b0", "s1b1"]
    assert len((tmp_path / "abl.jsonl").read_text().splitlines()) == 4
    assert main(["plot", "--history", str(tmp_path / "run" / METRICS_FILE), "--out", str(tmp_path / "pl")]) == 0
    assert len(list((tmp_path / "pl").glob("critique_*.png"))) == 4


def test_cli_plot_empty_history(tmp_path, capsys):
    empty = tmp_path / "metrics.jsonl"
    empty.write_text("")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["plot", "--history", str(empty)]) == 0
    assert "empty" in capsys.readouterr().err


def test_cli_errors(tmp_path, capsys):
    assert main(["frobnicate"]) != 0
    assert main(["train"]) != 0
    assert "usage" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("[reward]\ngamma = -0.5\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "reward.gamma" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "none.pt")]) == 2


def test_cli_selftest(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_module_entry_point():
    import subprocess
    import sys
    done = subprocess.run([sys.executable, "-m", "dreal", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "selftest" in done.stdout
