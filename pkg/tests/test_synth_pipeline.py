import csv
import dataclasses
import json

import numpy as np
import pytest
from conftest import TINY_FEATURES, TINY_SYNTH

from shared.ctc import Alphabet
from shared.dataset import MANIFEST_FILE, load_manifest
from shared.dsp_features import EegRecording, design_bandpass, design_notch, extract_eeg_features
from shared.errors import DataError, ParameterError
from shared.pipeline import EXPLAINED_VARIANCE_FILE, extract_eeg, extract_mfccs, load_kpca
from shared.synth import symbol_codes, synth_dataset, synth_eeg
from shared.tensor_file import read_tensor


def tree_bytes(root) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynth:
    def test_corpus_shape_and_split(self, tmp_path):
        manifest = synth_dataset(tmp_path, TINY_SYNTH, seed=1)
        assert len(manifest.entries) == 6
        assert manifest.subjects("train") == [0]
        assert manifest.subjects("test") == [1]
        assert {e.transcript for e in manifest.split("test")} == {e.transcript for e in manifest.split("train")}

    def test_same_seed_is_byte_identical(self, tmp_path):
        synth_dataset(tmp_path / "a", TINY_SYNTH, seed=5)
        synth_dataset(tmp_path / "b", TINY_SYNTH, seed=5)
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        synth_dataset(tmp_path / "a", TINY_SYNTH, seed=5)
        synth_dataset(tmp_path / "b", TINY_SYNTH, seed=6)
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a.keys() == b.keys()
        assert a != b

    def test_recording_shapes(self, tmp_path):
        manifest = synth_dataset(tmp_path, TINY_SYNTH, seed=1)
        entry = manifest.entries[0]
        eeg = read_tensor(manifest.path(entry, "eeg"))
        audio = read_tensor(manifest.path(entry, "audio"))
        video = read_tensor(manifest.path(entry, "video"))
        seconds = eeg.shape[1] / 1000
        assert eeg.shape[0] == 3 and eeg.dtype == np.float32
        assert 0.5 <= seconds <= 0.8
        assert audio.shape == (round(seconds * 16000),)
        assert video.shape == (round(seconds * 100), 16, 16) and video.dtype == np.uint8

    def test_viseme_groups_share_a_blob_position(self):
        sc = symbol_codes(0, 4, visemes=8)
        assert sc.blob_xy.shape == (28, 2)
        positions = {tuple(xy) for xy in sc.blob_xy}
        assert len(positions) == 8
        # the other streams still tell every symbol apart
        assert len({tuple(f) for f in sc.eeg_freqs}) == 28
        assert len(set(sc.tone_hz)) == 28

    def test_enough_visemes_means_one_position_per_symbol(self):
        assert len({tuple(xy) for xy in symbol_codes(0, 4, visemes=28).blob_xy}) == 28

    def test_visemes_must_be_positive(self, tmp_path):
        with pytest.raises(ParameterError):
            synth_dataset(tmp_path, dataclasses.replace(TINY_SYNTH, visemes=0), seed=1)

    def test_full_montage_gives_155_features(self):
        codes = np.asarray(Alphabet().encode("the cat")) - 1
        sc = symbol_codes(0, 31)
        eeg = synth_eeg(codes, sc, np.ones(31), 1.0, 0.1, np.random.default_rng(0))
        feats = extract_eeg_features(EegRecording(eeg.astype(np.float64)), design_bandpass(), design_notch())
        assert feats.frames.shape == (100, 155)

    def test_too_many_sentences(self, tmp_path):
        with pytest.raises(ParameterError):
            synth_dataset(tmp_path, dataclasses.replace(TINY_SYNTH, n_sentences=31))

    def test_single_subject_is_all_training(self, tmp_path):
        manifest = synth_dataset(tmp_path, dataclasses.replace(TINY_SYNTH, n_subjects=1), seed=1)
        assert manifest.split("test") == []


class TestManifest:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="synth-data"):
            load_manifest(tmp_path)

    def test_transcripts_are_lowercased(self, tmp_path):
        synth_dataset(tmp_path, TINY_SYNTH, seed=1)
        path = tmp_path / MANIFEST_FILE
        raw = json.loads(path.read_text())
        raw["utterances"][0]["transcript"] = raw["utterances"][0]["transcript"].upper()
        path.write_text(json.dumps(raw))
        assert load_manifest(tmp_path).entries[0].transcript == "she had your dark suit"

    def test_subject_in_both_splits(self, tmp_path):
        synth_dataset(tmp_path, TINY_SYNTH, seed=1)
        path = tmp_path / MANIFEST_FILE
        raw = json.loads(path.read_text())
        raw["utterances"][-1]["subject_id"] = 0
        path.write_text(json.dumps(raw))
        with pytest.raises(DataError, match="both"):
            load_manifest(tmp_path)

    def test_unknown_character(self, tmp_path):
        synth_dataset(tmp_path, TINY_SYNTH, seed=1)
        path = tmp_path / MANIFEST_FILE
        raw = json.loads(path.read_text())
        raw["utterances"][0]["transcript"] = "café"
        path.write_text(json.dumps(raw))
        with pytest.raises(DataError):
            load_manifest(tmp_path)


class TestFeatureStages:
    def test_every_stream_is_recorded(self, prepared):
        _, manifest = prepared
        for entry in manifest.entries:
            assert set(entry.paths) == {"eeg", "audio", "video", "eeg_stat", "mfcc", "frames", "kpca"}
            eeg_stat = read_tensor(manifest.path(entry, "eeg_stat"))
            assert eeg_stat.shape[1] == 15
            assert read_tensor(manifest.path(entry, "kpca")).shape == (eeg_stat.shape[0], 4)
            assert read_tensor(manifest.path(entry, "mfcc")).shape[1] == 13
            frames = read_tensor(manifest.path(entry, "frames"))
            assert frames.shape[1:] == (8, 8) and frames.dtype == np.uint8

    def test_manifest_on_disk_has_feature_paths(self, prepared):
        config, manifest = prepared
        reloaded = load_manifest(config.data_dir)
        assert [e.paths for e in reloaded.entries] == [e.paths for e in manifest.entries]

    def test_kpca_outputs(self, prepared):
        config, _ = prepared
        model, stats = load_kpca(f"{config.out_dir}/kpca")
        assert model.n_components == 4 and model.input_dim == 15
        assert len(model.training_points) == TINY_FEATURES.kpca_max_fit_points
        assert stats["feature_std"].shape == (15,)
        with open(f"{config.out_dir}/{EXPLAINED_VARIANCE_FILE}", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["components", "cumulative_ratio"]
        ratios = [float(r[1]) for r in rows[1:]]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
        assert all(a <= b for a, b in zip(ratios, ratios[1:])) and ratios[-1] <= 1.0

    def test_missing_recording_is_named(self, tmp_path):
        manifest = synth_dataset(tmp_path, TINY_SYNTH, seed=1)
        missing = manifest.path(manifest.entries[2], "eeg")
        missing.unlink()
        with pytest.raises(DataError, match="eeg.mtns"):
            extract_eeg(manifest, TINY_FEATURES)

    def test_worker_pool_matches_serial(self, tmp_path):
        serial = synth_dataset(tmp_path / "a", TINY_SYNTH, seed=2)
        pooled = synth_dataset(tmp_path / "b", TINY_SYNTH, seed=2)
        extract_mfccs(serial, TINY_FEATURES)
        extract_mfccs(pooled, dataclasses.replace(TINY_FEATURES, workers=2))
        for a, b in zip(serial.entries, pooled.entries):
            assert serial.path(a, "mfcc").read_bytes() == pooled.path(b, "mfcc").read_bytes()
