import csv
import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest
from conftest import TINY_MODEL

from shared.config import override, override_decoder
from shared.ctc import BLANK, Alphabet
from shared.errors import ConfigError, DataError
from shared.evaluation import SUMMARY_FILE, ordering_holds, run_eval, run_experiment
from shared.metrics import wer
from shared.model import ModelGraph
from shared.synth import synth_dataset
from shared.training import (
    CHECKPOINT_DIR,
    LOSS_CURVE_FILE,
    Sample,
    batch_loss,
    condition_dir,
    condition_spec,
    length_buckets,
    load_checkpoint,
    pad_batch,
    run_training,
    validation_split,
)


def side_sample(uid: str, steps: int, label: list[int]) -> Sample:
    return Sample(uid, "", label, None, np.ones((steps, 2)))


class TestConditions:
    def test_condition_directories(self, tmp_path):
        assert condition_dir(tmp_path, "video+eeg+mfcc") == tmp_path / "video_eeg_mfcc"

    def test_streams_per_condition(self):
        assert condition_spec("video").feature_keys == ["frames"]
        assert condition_spec("video+eeg").feature_keys == ["frames", "kpca"]
        assert condition_spec("mfcc").feature_keys == ["mfcc"]

    def test_unknown_condition(self):
        with pytest.raises(ConfigError):
            condition_spec("eeg")


class TestBatching:
    def test_validation_split_is_a_seeded_partition(self):
        train, val = validation_split(20, 0.1, seed=3)
        assert len(val) == 2
        assert sorted(train + val) == list(range(20))
        assert validation_split(20, 0.1, seed=3) == (train, val)

    def test_validation_never_takes_everything(self):
        train, val = validation_split(1, 0.5, seed=0)
        assert train == [0] and val == []

    def test_validation_fraction_range(self):
        with pytest.raises(ConfigError):
            validation_split(10, 1.0, seed=0)

    def test_buckets_are_sorted_by_length(self):
        samples = [side_sample(str(i), n, [1]) for i, n in enumerate([5, 2, 9, 4, 7])]
        assert length_buckets(samples, [0, 1, 2, 3, 4], 2) == [[1, 0], [3, 2], [4]]

    def test_padding_keeps_true_lengths(self):
        _, side, lengths = pad_batch([side_sample("a", 2, [1]), side_sample("b", 4, [1])])
        assert lengths == [2, 4]
        assert side.shape == (2, 4, 2)
        assert np.all(side[0, 2:] == 0) and np.all(side[0, :2] == 1)

    def test_infeasible_samples_are_skipped(self):
        model = ModelGraph.build("side_only", 29, TINY_MODEL, side_dim=2)
        loss, count, grads = batch_loss(model, [side_sample("short", 2, [3, 4, 5])], training=True)
        assert (loss, count, grads) == (0.0, 0, None)

    def test_infeasible_and_zero_probability_are_logged_apart(self, caplog, monkeypatch):
        model = ModelGraph.build("side_only", 29, TINY_MODEL, side_dim=2)
        with caplog.at_level(logging.WARNING, logger="shared.training"):
            batch_loss(model, [side_sample("short", 2, [3, 3, 4])], training=False)
        assert "3 symbols need 4 frames, got 2" in caplog.text
        assert "zero probability" not in caplog.text

        caplog.clear()
        probs = np.zeros((1, 3, 29))
        probs[..., BLANK] = 1.0
        monkeypatch.setattr(model, "forward", lambda *args, **kwargs: probs)
        with caplog.at_level(logging.WARNING, logger="shared.training"):
            loss, count, _ = batch_loss(model, [side_sample("silent", 3, [5])], training=False)
        assert (loss, count) == (0.0, 0)
        assert "silent: label has zero probability" in caplog.text
        assert "frames, got" not in caplog.text

    def test_padding_does_not_change_the_loss(self):
        model = ModelGraph.build("side_only", 29, TINY_MODEL, side_dim=2)
        short = Sample("s", "", [3, 4], None, np.random.default_rng(0).standard_normal((5, 2)))
        long = Sample("l", "", [5], None, np.random.default_rng(1).standard_normal((9, 2)))
        alone, _, _ = batch_loss(model, [short], training=False)
        together, _, _ = batch_loss(model, [short, long], training=False)
        partner, _, _ = batch_loss(model, [long], training=False)
        assert together == pytest.approx((alone + partner) / 2, abs=1e-10)


class TestRunTraining:
    def test_writes_loss_curve_and_checkpoint(self, prepared):
        config, manifest = prepared
        result = run_training(config, manifest)
        out = condition_dir(config.out_dir, config.condition)
        assert result.loss_curve == out / LOSS_CURVE_FILE
        with result.loss_curve.open(newline="") as f:
            rows = list(csv.DictReader(f))
        assert [int(r["epoch"]) for r in rows] == [1, 2]
        assert all(math.isfinite(float(r["train_loss"])) for r in rows)
        assert all(r["val_loss"] == "nan" for r in rows)
        model, header, norm = load_checkpoint(out / CHECKPOINT_DIR, Alphabet())
        assert header["condition"] == config.condition
        assert norm is not None and norm.mean.shape == (4 + 13,)
        assert model.parameter_count == result.model.parameter_count

    def test_loss_falls_every_epoch_at_first(self, prepared):
        config, manifest = prepared
        # one full batch per epoch, so each epoch's loss follows exactly one Adam step
        training = dataclasses.replace(config.training, epochs=5, batch_size=8, learning_rate=1e-3)
        history = run_training(dataclasses.replace(config, training=training), manifest).history
        losses = [row["train_loss"] for row in history]
        assert len(losses) == 5
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_same_seed_same_history(self, prepared, tmp_path):
        config, manifest = prepared
        first = run_training(config, manifest).history
        second = run_training(override(config, out_dir=str(tmp_path / "again")), manifest).history
        assert [r["train_loss"] for r in first] == [r["train_loss"] for r in second]

    def test_validation_loss_is_reported(self, prepared):
        config, manifest = prepared
        config = dataclasses.replace(config, training=dataclasses.replace(config.training, validation_split=0.4))
        history = run_training(config, manifest).history
        assert all(math.isfinite(row["val_loss"]) for row in history)

    def test_side_only_condition(self, prepared):
        config, manifest = prepared
        result = run_training(override(config, condition="mfcc"), manifest)
        assert result.model.frame_shape is None and result.model.side_dim == 13

    def test_missing_features(self, tiny_config):
        synth_dataset(tiny_config.data_dir, tiny_config.synth, tiny_config.seed)
        with pytest.raises(DataError, match="frames"):
            run_training(tiny_config)

    def test_checkpoint_alphabet_must_match(self, prepared):
        config, manifest = prepared
        result = run_training(config, manifest)
        with pytest.raises(ConfigError):
            load_checkpoint(result.checkpoint, Alphabet(("a", "b")))


class TestEvaluation:
    def test_report(self, prepared):
        config, manifest = prepared
        run_training(config, manifest)
        report = run_eval(config, manifest=manifest)
        path = condition_dir(config.out_dir, config.condition) / "report_test.json"
        assert json.loads(path.read_text()) == report
        assert report["count"] == 3
        assert report["decoder"]["lm"] == "train_transcripts"
        for row in report["utterances"]:
            assert row["wer"] == wer(row["ref"], row["hyp"])
        assert report["mean_wer"] == pytest.approx(np.mean([r["wer"] for r in report["utterances"]]))

    def test_greedy_decoder_uses_no_lm(self, prepared):
        config, manifest = prepared
        run_training(config, manifest)
        report = run_eval(override_decoder(config, method="greedy"), manifest=manifest, split="train")
        assert report["decoder"] == {**report["decoder"], "method": "greedy", "lm": None}
        assert report["split"] == "train"

    def test_missing_checkpoint(self, prepared):
        config, manifest = prepared
        with pytest.raises(DataError):
            run_eval(config, manifest=manifest)

    def test_ordering(self):
        chain = ("a", "b", "c")
        assert ordering_holds({"a": 10.0, "b": 20.0, "c": 20.0}, chain) is True
        assert ordering_holds({"a": 30.0, "b": 20.0, "c": 40.0}, chain) is False
        assert ordering_holds({"a": 10.0, "c": 20.0}, chain) is None

    def test_experiment_summary(self, prepared):
        config, manifest = prepared
        summary = run_experiment(config, ("video", "mfcc"), manifest)
        assert json.loads((Path(config.out_dir) / SUMMARY_FILE).read_text()) == summary
        assert set(summary["mean_wer"]) == {"video", "mfcc"}
        assert summary["ordering"]["holds"] is None
        for condition in ("video", "mfcc"):
            assert (condition_dir(config.out_dir, condition) / "report_test.json").is_file()
