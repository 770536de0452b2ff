import json

import numpy as np
import pytest
from conftest import TINY_OVERRIDES, tiny_config

from collidenet.datagen import ClipSample, Dataset
from collidenet.errors import ConfigError, LoadError, TrainingDiverged
from collidenet.harness import (
    ABLATION_ROWS,
    Checkpoint,
    constant_baseline,
    evaluate,
    evaluate_predictor,
    load_checkpoint,
    run_ablation,
    run_sensitivity,
    save_checkpoint,
    toggles_for,
    train,
)
from collidenet.harness import training as training_mod
from collidenet.harness.checkpoint import decode_checkpoint, encode_checkpoint
from collidenet.harness.cli import main
from collidenet.temporal import CollideNet


def _model(cfg, seed=0):
    return CollideNet(cfg.model, seed=seed)


def test_tiny_config_is_valid(tiny_dataset):
    tiny_config().validate()
    assert tiny_dataset.train and tiny_dataset.val and tiny_dataset.test


def test_zero_learning_rate_leaves_parameters_untouched(tiny_dataset):
    cfg = tiny_config(**{"train.lr": "0.0"})
    model = _model(cfg)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    train(model, tiny_dataset, cfg)
    for k, v in model.state_dict().items():
        assert np.array_equal(v, before[k]), k


def test_memorizes_a_single_clip(tiny_dataset):
    clip = next(s for s in tiny_dataset.train if s.ttc_label < 1.0)
    one = Dataset([clip], [clip], [clip])
    cfg = tiny_config(**{"train.max_epochs": "200", "train.plateau_patience": "150",
                         "train.early_stop_patience": "199", "train.balance": "false"})
    model = _model(cfg)
    res = train(model, one, cfg)
    initial = res.history[0]["train_mse"]
    assert res.best_val_mse < 0.01 * initial


def test_schedule_invariants(tiny_dataset, monkeypatch):
    # a validation curve that improves every epoch never triggers a decay
    cfg = tiny_config(**{"train.max_epochs": "6", "train.plateau_patience": "2", "train.early_stop_patience": "3"})
    values = iter([10.0 - i for i in range(20)])
    monkeypatch.setattr(training_mod, "mse_of", lambda *a, **k: next(values))
    res = train(_model(cfg), tiny_dataset, cfg)
    assert len(res.history) == 6 and not any(r["lr_decay"] for r in res.history)
    assert res.best_epoch == 6

    # a flat curve decays every plateau_patience epochs and stops after early_stop_patience
    monkeypatch.setattr(training_mod, "mse_of", lambda *a, **k: 1.0)
    res = train(_model(cfg), tiny_dataset, cfg)
    assert res.best_epoch == 0 and len(res.history) == 3
    assert [r["lr_decay"] for r in res.history] == [False, True, False]
    assert res.checkpoint.meta["epoch"] == "0"


def test_history_lr_halves_on_plateau(tiny_dataset, monkeypatch):
    cfg = tiny_config(**{"train.max_epochs": "9", "train.plateau_patience": "2", "train.early_stop_patience": "8"})
    monkeypatch.setattr(training_mod, "mse_of", lambda *a, **k: 1.0)
    res = train(_model(cfg), tiny_dataset, cfg)
    # each record holds the lr used during that epoch; a decay applies from the next one
    assert len(res.history) == 8
    assert [r["lr_decay"] for r in res.history] == [False, True] * 4
    assert [r["lr"] for r in res.history] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 1.25e-4, 1.25e-4]


def test_non_finite_loss_dumps_diagnostics(tiny_dataset, tmp_path):
    bad = [ClipSample(s.frames, float("nan"), s.id) for s in tiny_dataset.train]
    cfg = tiny_config(**{"train.balance": "false"})
    with pytest.raises(TrainingDiverged):
        train(_model(cfg), Dataset(bad, tiny_dataset.val, []), cfg, out_dir=tmp_path)
    info = json.loads((tmp_path / "diagnostics.json").read_text())
    assert info["epoch"] == 1 and "param_norms" in info


def _clips(labels):
    return [ClipSample(np.zeros((2, 2, 2, 3), np.float32), y, f"c{i}") for i, y in enumerate(labels)]


def test_evaluate_oracle_and_constant():
    samples = _clips([1.0, 3.0])
    labels = np.array([1.0, 3.0])
    assert evaluate_predictor(lambda x: labels, samples).mse == 0.0
    assert evaluate_predictor(lambda x: np.full(len(x), 2.0), samples).mse == 1.0


def test_constant_baseline_uses_train_mean():
    ds = Dataset(_clips([1.0, 3.0]), [], _clips([2.0, 4.0]))
    assert constant_baseline(ds).mse == pytest.approx(2.0)


def test_checkpoint_round_trip_and_repeatable_eval(tiny_dataset, tmp_path):
    cfg = tiny_config()
    ckpt = Checkpoint.from_model(_model(cfg, 3), cfg, epoch=0, seed=3)
    save_checkpoint(tmp_path / "m.cnck", ckpt)
    back = load_checkpoint(tmp_path / "m.cnck")
    assert back.config == cfg and back.meta == ckpt.meta
    a, b = evaluate(ckpt, tiny_dataset), evaluate(back, tiny_dataset)
    assert a.to_csv() == b.to_csv() and a.summary_csv() == b.summary_csv()


def test_checkpoint_corruption_and_mismatch(tiny_dataset):
    cfg = tiny_config()
    blob = encode_checkpoint(Checkpoint.from_model(_model(cfg), cfg))
    for bad in (b"XXXX" + blob[4:], blob[:-3], blob + b"\0"):
        with pytest.raises(LoadError):
            decode_checkpoint(bad)
    wrong = Checkpoint.from_model(_model(cfg), tiny_config(**{"model.head_hidden": "4"}))
    with pytest.raises(LoadError):
        wrong.build_model()
    longer = Checkpoint.from_model(_model(cfg), cfg)
    longer.config = tiny_config(**{"temporal.seq_len": "4", "data.fps": "4"})
    with pytest.raises(LoadError):
        Checkpoint(longer.config, longer.state).build_model()


def test_ablation_rows():
    assert len(ABLATION_ROWS) == 14
    assert toggles_for(1).__dict__ == {"ms": True, "trend": True, "seasonal": True, "ns": True}
    assert not any(toggles_for(14).__dict__.values())
    t6 = toggles_for(6)
    assert (t6.ms, t6.trend, t6.seasonal, t6.ns) == (False, True, True, False)
    with pytest.raises(ConfigError):
        toggles_for(15)


def test_ablation_zero_epoch_smoke_path(tiny_dataset):
    cfg = tiny_config(**{"train.max_epochs": "0"})
    res = run_ablation(cfg, tiny_dataset, seeds=[0, 1])
    lines = res.summary_csv.splitlines()
    assert lines[0] == "ID,MS,T,S,NS,mse_mean,mse_std" and len(lines) == 15
    assert len(res.runs) == 28 and all(r.ok for r in res.runs)
    # zero epochs: every score is the freshly initialized model's test error
    run = res.runs[0]
    init = CollideNet(cfg.model, seed=training_mod.derive_seed(run.seed, "init"))
    assert run.mse == evaluate(Checkpoint.from_model(init, cfg), tiny_dataset).mse


def test_ablation_subset_reports_nan_for_missing_rows(tiny_dataset):
    res = run_ablation(tiny_config(**{"train.max_epochs": "0"}), tiny_dataset, seeds=[0], rows=[1, 14])
    rows = [line.split(",") for line in res.summary_csv.splitlines()[1:]]
    assert len(rows) == 14
    assert rows[0][5] != "nan" and rows[13][5] != "nan" and rows[5][5] == "nan"


def test_ablation_records_failures(tiny_dataset):
    bad = Dataset(tiny_dataset.train, [], tiny_dataset.test)
    res = run_ablation(tiny_config(**{"train.max_epochs": "0"}), bad, seeds=[0], rows=[1])
    assert not res.runs[0].ok and "failed" in res.runs_csv


def test_sweep_rows_and_grid(tiny_dataset):
    cfg = tiny_config(**{"train.max_epochs": "0"})
    res = run_sensitivity(cfg, "window_k", [1], tiny_dataset, seeds=[0])
    assert res.summary_csv.splitlines()[1].startswith("window_k,1,")
    res = run_sensitivity(cfg, "temporal_scales", [1, 2, 3], tiny_dataset, seeds=[0])
    assert len(res.summary_csv.splitlines()) == 4


def test_sweep_rejects_bad_values_before_training(tiny_dataset, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("training started")

    monkeypatch.setattr("collidenet.harness.experiments.train", boom)
    with pytest.raises(ConfigError):
        run_sensitivity(tiny_config(), "spatial_scales", [1, 9], tiny_dataset, seeds=[0])
    with pytest.raises(ConfigError):
        run_sensitivity(tiny_config(), "depth", [1], tiny_dataset, seeds=[0])


def _tiny_config_file(path):
    path.write_text("".join(f"{k} = {v}\n" for k, v in TINY_OVERRIDES.items()))
    return path


def test_cli_end_to_end_is_byte_reproducible(tmp_path):
    cfg = _tiny_config_file(tmp_path / "tiny.cfg")
    data = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data), "--seed", "5"]) == 0
    manifest = str(data / "manifest.csv")

    def run(tag):
        out = tmp_path / tag
        common = ["--config", str(cfg), "--seed", "5", "--deterministic"]
        assert main(["train", *common, "--manifest", manifest, "--out", str(out / "train")]) == 0
        ckpt = str(out / "train" / "checkpoint.cnck")
        assert main(["eval", *common, "--manifest", manifest, "--checkpoint", ckpt, "--out", str(out / "eval")]) == 0
        assert main(["ablate", *common, "--manifest", manifest, "--seeds", "0", "--rows", "1,14",
                     "--set", "train.max_epochs=0", "--out", str(out / "ablate")]) == 0
        assert main(["sweep", *common, "--manifest", manifest, "--axis", "window_k", "--values", "1,3",
                     "--seeds", "0", "--set", "train.max_epochs=0", "--out", str(out / "sweep")]) == 0
        assert main(["diagnose", *common, "--out", str(out / "diag")]) == 0
        assert main(["diagnose", *common, "--checkpoint", ckpt, "--manifest", manifest, "--split", "train",
                     "--out", str(out / "diag_ckpt")]) == 0
        assert main(["decompose", *common, "--out", str(out / "dec")]) == 0
        return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))}

    first, second = run("a"), run("b")
    assert len(first) >= 10
    assert first == second
    assert (tmp_path / "a" / "train" / "checkpoint.cnck").read_bytes() == \
        (tmp_path / "b" / "train" / "checkpoint.cnck").read_bytes()


def test_cli_errors_return_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.nonsense = 1\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "nonsense" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.cnck"), "--out", str(tmp_path)]) == 2


def test_experiment_scripts_run_on_a_tiny_config(tmp_path):
    import subprocess
    import sys
    from pathlib import Path

    root = Path(__file__).resolve().parents[1]
    cfg = _tiny_config_file(tmp_path / "tiny.cfg")

    def script(name, *args):
        proc = subprocess.run([sys.executable, str(root / "scripts" / name), *args],
                              capture_output=True, text=True, timeout=600)
        assert proc.returncode == 0, proc.stderr

    script("run_ablation.py", "--config", str(cfg), "--rows", "1", "--seeds", "0", "--out", str(tmp_path / "abl"))
    assert len((tmp_path / "abl" / "ablation.csv").read_text().splitlines()) == 15
    script("run_sweeps.py", "--config", str(cfg), "--axes", "window_k", "--seeds", "0", "--out", str(tmp_path / "sw"))
    assert len((tmp_path / "sw" / "sweep_window_k.csv").read_text().splitlines()) == 5
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "tr")]) == 0
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    script("inspect_embeddings.py", str(tmp_path / "tr" / "checkpoint.cnck"), str(tmp_path / "data" / "manifest.csv"),
           "--split", "train", "--out", str(tmp_path / "insp"))
    assert (tmp_path / "insp" / "seasonal.csv").exists()
