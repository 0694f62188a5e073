import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from mcp_server import server as mcp_server
from rest_api.server import app
from shared import config, kpca, service
from shared.charlm import save_lm, train_lm
from shared.ctc import BLANK, Alphabet
from shared.errors import ConfigError, DataError, ParameterError, ShapeError
from shared.tensor_file import save_bundle


def spelled(text: str, peak: float = 0.9) -> list[list[float]]:
    """Probability rows that spell ``text`` with a blank after every character."""
    alphabet = Alphabet()
    indices = [i for ch in text for i in (alphabet.index(ch), BLANK)]
    probs = np.full((len(indices), alphabet.size), (1 - peak) / (alphabet.size - 1))
    probs[np.arange(len(indices)), indices] = peak
    return probs.tolist()


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch, tmp_path):
    monkeypatch.setattr(config, "LM_PATH", None)
    monkeypatch.setattr(config, "OUT_DIR", str(tmp_path))


@pytest.fixture
def client() -> TestClient:
    return TestClient(app)


class TestService:
    def test_compute_wer(self):
        result = service.compute_wer("the cat sat", "the sat")
        assert result["wer"] == pytest.approx(100 / 3)
        assert result["ref_words"] == 3

    def test_greedy_decode(self):
        result = service.decode_probabilities(spelled("it's"), method="greedy")
        assert result == {"text": "it's", "method": "greedy", "frames": 8, "lm": False}

    def test_beam_decode_with_inline_corpus(self):
        result = service.decode_probabilities(spelled("the cat"), corpus=["The cat sat"])
        assert result["text"] == "the cat"
        assert result["lm"] is True

    def test_empty_matrix(self):
        assert service.decode_probabilities([])["text"] == ""

    def test_wrong_width(self):
        with pytest.raises(ShapeError):
            service.decode_probabilities([[0.5, 0.5]])

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            service.decode_probabilities(spelled("a"), method="viterbi")

    def test_lm_from_file(self, tmp_path):
        path = save_lm(train_lm(["ab"]), tmp_path / "lm.json")
        result = service.score_next_char("b", "a", lm_path=str(path))
        assert result["prob"] == pytest.approx(1.1 / 3.8)
        assert result["log_prob"] == pytest.approx(np.log(1.1 / 3.8))
        assert result["order"] == 4

    def test_lm_path_is_relative_to_the_output_directory(self, tmp_path):
        (tmp_path / "lms").mkdir()
        save_lm(train_lm(["ab"]), tmp_path / "lms" / "lm.json")
        assert service.score_next_char("b", "a", lm_path="lms/lm.json")["order"] == 4

    @pytest.mark.parametrize("lm_path", ["../outside.json", "/etc/passwd", "/nonexistent/lm.json"])
    def test_lm_path_must_stay_inside_the_output_directory(self, tmp_path, monkeypatch, lm_path):
        runs = tmp_path / "runs"
        runs.mkdir()
        save_lm(train_lm(["ab"]), tmp_path / "outside.json")
        monkeypatch.setattr(config, "OUT_DIR", str(runs))
        with pytest.raises(ParameterError, match="inside the output directory"):
            service.score_next_char("b", "a", lm_path=lm_path)

    def test_kpca_bundle_must_stay_inside_the_output_directory(self):
        with pytest.raises(ParameterError):
            service.kpca_explained_variance("/etc")

    def test_score_needs_a_model(self):
        with pytest.raises(ConfigError):
            service.score_next_char("a")

    def test_kpca_explained_variance(self, tmp_path, rng):
        save_bundle(tmp_path / "kpca", *kpca.to_bundle(kpca.fit(rng.standard_normal((12, 3)), 3)))
        result = service.kpca_explained_variance()
        assert result["components"] == 3
        assert len(result["cumulative"]) == 3

    def test_report_must_stay_inside_the_output_directory(self, tmp_path):
        (tmp_path / "secret.json").write_text("{}")
        with pytest.raises(ParameterError):
            service.read_report("../secret.json", out_dir=str(tmp_path / "runs"))

    def test_report_must_be_json(self, tmp_path):
        with pytest.raises(ParameterError):
            service.read_report("loss_curve.csv", out_dir=str(tmp_path))

    def test_missing_report(self, tmp_path):
        with pytest.raises(DataError):
            service.read_report("nope.json", out_dir=str(tmp_path))


class TestRestApi:
    def test_health(self, client):
        assert client.get("/").status_code == 200
        assert client.get("/healthz").json() == {"status": "healthy"}

    def test_wer(self, client):
        response = client.post("/wer", json={"ref": "the cat sat", "hyp": "a dog ran"})
        assert response.status_code == 200
        assert response.json()["wer"] == 100.0

    def test_decode(self, client):
        response = client.post("/decode", json={"probs": spelled("ok"), "method": "greedy"})
        assert response.status_code == 200
        assert response.json()["text"] == "ok"

    def test_decode_bad_shape(self, client):
        response = client.post("/decode", json={"probs": [[0.5, 0.5]]})
        assert response.status_code == 422
        assert response.json()["detail"].startswith("shape_error:")

    def test_decode_unknown_method(self, client):
        assert client.post("/decode", json={"probs": spelled("a"), "method": "viterbi"}).status_code == 409

    def test_lm_score(self, client):
        response = client.post("/lm/score", json={"next_symbol": "b", "history": "a", "corpus": ["ab"]})
        assert response.status_code == 200
        assert response.json()["prob"] == pytest.approx(1.1 / 3.8)

    @pytest.mark.parametrize("lm_path", ["/etc/passwd", "/nonexistent/lm.json"])
    def test_lm_score_rejects_outside_paths(self, client, lm_path):
        response = client.post("/lm/score", json={"next_symbol": "a", "lm_path": lm_path})
        assert response.status_code == 422
        detail = response.json()["detail"]
        assert detail.startswith("parameter_error:")
        assert "not found" not in detail and "JSON" not in detail

    def test_lm_score_without_model(self, client):
        response = client.post("/lm/score", json={"next_symbol": "a"})
        assert response.status_code == 409
        assert response.json()["detail"].startswith("config_error:")

    def test_lm_score_unknown_symbol(self, client):
        response = client.post("/lm/score", json={"next_symbol": "%", "corpus": ["ab"]})
        assert response.status_code == 422

    def test_report(self, client, tmp_path):
        (tmp_path / "video").mkdir()
        (tmp_path / "video" / "report_test.json").write_text(json.dumps({"mean_wer": 42.0}))
        assert client.get("/reports/video/report_test.json").json() == {"mean_wer": 42.0}

    def test_missing_report(self, client):
        response = client.get("/reports/absent.json")
        assert response.status_code == 422
        assert response.json()["detail"].startswith("data_error:")


class TestMcpServer:
    def test_tools_delegate_to_the_service(self):
        assert mcp_server.compute_wer("a b", "a b")["wer"] == 0.0
        assert mcp_server.decode_probabilities(spelled("hi"), method="greedy")["text"] == "hi"
        assert mcp_server.score_next_char("b", "a", corpus=["ab"])["order"] == 4

    def test_read_report_tool(self, tmp_path):
        (tmp_path / "experiment_summary.json").write_text('{"seed": 1}')
        assert mcp_server.read_report("experiment_summary.json") == {"seed": 1}

    def test_default_config_resource(self):
        defaults = json.loads(mcp_server.get_default_config())
        assert defaults["condition"] == "video+eeg+mfcc"
        assert defaults["decoder"]["beam_width"] == 16
        assert defaults["model"]["gru_units"] == [128, 64, 32]

    def test_analysis_prompt(self):
        prompt = mcp_server.analyze_experiment()
        assert 'read_report("experiment_summary.json")' in prompt
        assert "video+eeg+mfcc <= video+eeg <= video" in prompt
