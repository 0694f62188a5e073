import json

import numpy as np
import pytest

from cli.main import build_config, build_parser, main
from shared.charlm import load_lm
from shared.ctc import BLANK, Alphabet
from shared.tensor_file import write_tensor


def run(capsys, *argv: str) -> tuple[int, dict | None, list[str]]:
    code = main(list(argv))
    out, err = capsys.readouterr()
    lines = out.strip().splitlines()
    payload = json.loads(lines[-1]) if lines else None
    return code, payload, [line for line in err.splitlines() if line.startswith("error:")]


def test_synth_data(capsys, tmp_path):
    code, payload, errors = run(
        capsys,
        "--data-dir", str(tmp_path / "data"),
        "synth-data", "--n-sentences", "2", "--n-reps", "1", "--n-subjects", "2", "--frame-size", "16",
    )
    assert code == 0 and errors == []
    assert payload["utterances"] == 4
    assert (payload["train"], payload["test"]) == (2, 2)
    assert (tmp_path / "data" / "manifest.json").is_file()


def test_gradcheck_passes(capsys):
    code, payload, _ = run(capsys, "gradcheck", "--seeds", "2")
    assert code == 0
    assert payload["passed"] is True
    assert {c["name"] for c in payload["checks"]} >= {"gru", "ctc", "model"}


def test_train_lm_from_corpus_file(capsys, tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("The cat sat\n\nthe dog ran\n")
    output = tmp_path / "lm.json"
    code, payload, _ = run(capsys, "train-lm", "--corpus", str(corpus), "--output", str(output))
    assert code == 0
    assert payload == {"lm": str(output), "sentences": 2, "order": 4}
    assert load_lm(output).prob("a", "the c") > load_lm(output).prob("q", "the c")


def test_decode_probability_tensor(capsys, tmp_path):
    alphabet = Alphabet()
    rows = [alphabet.index("n"), BLANK, alphabet.index("o")]
    probs = np.full((3, alphabet.size), 0.01)
    probs[np.arange(3), rows] = 0.72
    write_tensor(tmp_path / "probs.mtns", probs)
    code, payload, _ = run(
        capsys, "--data-dir", str(tmp_path / "empty"), "decode", "--probs", str(tmp_path / "probs.mtns"),
        "--decoder", "greedy",
    )
    assert code == 0
    assert payload == {"hyp": "no"}


def test_missing_manifest_is_one_error_line(capsys, tmp_path):
    code, payload, errors = run(capsys, "--data-dir", str(tmp_path), "extract-eeg")
    assert code == 1
    assert payload is None
    assert len(errors) == 1
    assert errors[0].startswith("error: data_error: manifest not found")


def test_decode_needs_an_input(capsys, tmp_path):
    code, _, errors = run(capsys, "--data-dir", str(tmp_path), "decode")
    assert code == 1
    assert errors == ["error: parameter_error: decode needs --utterance or --probs"]


def test_bad_config_file(capsys, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"training": {"epochz": 3}}))
    code, _, errors = run(capsys, "--config", str(path), "train")
    assert code == 1
    assert errors[0].startswith("error: config_error: unknown keys in 'training'")


def test_missing_corpus_file_is_one_error_line(capsys, tmp_path):
    code = main(["--log-level", "ERROR", "train-lm", "--corpus", str(tmp_path / "nope.txt")])
    _, err = capsys.readouterr()
    assert code == 1
    assert len(err.splitlines()) == 1
    assert err.startswith("error: io_error: ")
    assert "nope.txt" in err


@pytest.mark.parametrize("contents", [None, b"\xff\xfe\x00\x81", b"{not json"])
def test_unusable_lm_file_is_one_error_line(capsys, tmp_path, contents):
    probs = np.full((2, Alphabet().size), 1.0 / Alphabet().size)
    write_tensor(tmp_path / "probs.mtns", probs)
    lm_path = tmp_path / "lm.json"
    if contents is not None:
        lm_path.write_bytes(contents)
    code = main([
        "--log-level", "ERROR", "--data-dir", str(tmp_path / "empty"),
        "decode", "--probs", str(tmp_path / "probs.mtns"), "--lm-path", str(lm_path),
    ])
    _, err = capsys.readouterr()
    assert code == 1
    assert len(err.splitlines()) == 1
    assert err.startswith("error: data_error: language model file")


def test_argument_errors_exit_with_two():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--condition", "eeg"])
    assert exc.value.code == 2


def test_flags_override_the_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 5, "decoder": {"beam_width": 4}, "training": {"epochs": 9}}))
    args = build_parser().parse_args(
        ["--config", str(path), "--seed", "8", "evaluate", "--beam-width", "32", "--lm-alpha", "0"]
    )
    config = build_config(args)
    assert config.seed == 8
    assert config.decoder.beam_width == 32
    assert config.decoder.lm_alpha == 0.0
    assert config.training.epochs == 9


@pytest.mark.slow
def test_train_and_evaluate(capsys, tmp_path):
    small = {
        "features": {"video_size": 8},
        "model": {"gru_units": [6], "dropout": 0.0, "conv_filters": 2, "video_embed": 4, "tcn_filters": 6},
    }
    (tmp_path / "config.json").write_text(json.dumps(small))
    common = [
        "--config", str(tmp_path / "config.json"),
        "--data-dir", str(tmp_path / "data"),
        "--out-dir", str(tmp_path / "runs"),
        "--seed", "3",
    ]
    synth = ["synth-data", "--n-sentences", "2", "--n-reps", "1", "--n-subjects", "2", "--frame-size", "16"]
    assert run(capsys, *common, *synth)[0] == 0
    for stage in ("extract-eeg", "extract-mfcc", "extract-video"):
        assert run(capsys, *common, stage)[0] == 0
    assert run(capsys, *common, "train", "--condition", "video+mfcc", "--epochs", "1", "--batch-size", "2")[0] == 0
    code, payload, _ = run(capsys, *common, "evaluate", "--condition", "video+mfcc", "--decoder", "greedy")
    assert code == 0
    assert payload["count"] == 2
