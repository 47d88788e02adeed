import csv
import json

import numpy as np
import pytest

from refspeech import cli
from refspeech.corpus import load_feature_table
from refspeech.errors import NumericError
from refspeech.text import read_transcripts, text_features

pytestmark = pytest.mark.filterwarnings("ignore::refspeech.refstats.SmallReferenceSample")


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--profile", "two_class", "--out", root / "synth") == 0
    assert run("reference", "--table", root / "synth" / "reference.csv", "--ct", 0.5, 1.0,
               "--n-boot", 20, "--out", root / "ref") == 0
    return root


class TestSynthAndExtract:
    def test_vowel_profile_round_trip(self, tmp_path):
        assert run("synth", "--profile", "vowel", "--n", 2, "--jitter", 2.0,
                   "--out", tmp_path / "wav") == 0
        assert run("extract", "--audio-dir", tmp_path / "wav", "--task", "sustained_vowel",
                   "--out", tmp_path / "feat") == 0
        table = load_feature_table(tmp_path / "feat" / "features.csv")
        truth = {r["file"][:-4]: r for r in read_rows(tmp_path / "wav" / "ground_truth.csv")}
        assert sorted(table.sample_ids) == sorted(truth)
        for r in table.rows:
            assert abs(r.features["localJitter"] - 2.0) <= 0.4
            assert r.features["localJitter"] == pytest.approx(
                float(truth[r.sample_id]["localJitter"]), abs=0.2)
        manifests = list((tmp_path / "feat").glob("manifest*.json"))
        assert [m.name for m in manifests] == ["manifest.json"]
        man = json.loads(manifests[0].read_text())
        assert man["command"] == "extract"
        assert {a["path"] for a in man["artifacts"]} == {"features.csv", "exclusions.csv"}

    def test_silence_profile_is_excluded(self, tmp_path):
        run("synth", "--profile", "silence", "--n", 1, "--out", tmp_path / "wav")
        assert run("extract", "--audio-dir", tmp_path / "wav", "--task", "sustained_vowel",
                   "--out", tmp_path / "feat") == 0
        rows = read_rows(tmp_path / "feat" / "exclusions.csv")
        assert [r["reason"] for r in rows] == ["step1_low_energy"]

    def test_speech_profile_with_transcripts(self, tmp_path):
        run("synth", "--profile", "speech", "--n", 2, "--out", tmp_path / "wav")
        assert run("extract", "--audio-dir", tmp_path / "wav", "--task", "picture_description",
                   "--transcripts", tmp_path / "wav" / "transcripts.jsonl",
                   "--out", tmp_path / "feat") == 0
        table = load_feature_table(tmp_path / "feat" / "features.csv")
        assert {"speech_rate", "ttr"} <= set(table.schema)

    def test_transcripts_profile_truth(self, tmp_path):
        run("synth", "--profile", "transcripts", "--n", 4, "--out", tmp_path)
        transcripts = read_transcripts(tmp_path / "transcripts.jsonl")
        for row in read_rows(tmp_path / "ground_truth.csv"):
            feats = text_features(transcripts[row["sample_id"]])
            assert feats["ttr"] == pytest.approx(float(row["type_token_ratio"]))
            assert feats["repetition_ratio"] == pytest.approx(float(row["repetition_ratio"]))

    def test_two_class_tables(self, corpus):
        table = load_feature_table(corpus / "synth" / "disease.csv")
        by_spk = {}
        for r in table.rows:
            by_spk.setdefault(r.speaker_id, set()).add(r.label)
        labels = [by_spk[s].pop() for s in sorted(by_spk)]
        assert labels[:4] == ["control", "patient", "control", "patient"]


class TestReferenceDetect:
    def test_reference_outputs(self, corpus):
        out = corpus / "ref"
        model = json.loads((out / "reference_model.json").read_text())
        assert len(model["partitions"]) == 2
        assert (out / "radar.svg").read_text().count("<polygon") == 4
        assert read_rows(out / "partition_tests.csv")

    def test_reference_rerun_is_byte_identical(self, corpus):
        assert run("reference", "--table", corpus / "synth" / "reference.csv", "--ct", 0.5, 1.0,
                   "--n-boot", 20, "--out", corpus / "ref2") == 0
        for name in ("reference_model.json", "partition_tests.csv", "radar.svg"):
            assert (corpus / "ref" / name).read_bytes() == (corpus / "ref2" / name).read_bytes()
        h = [json.loads((corpus / d / "manifest.json").read_text())["config_hash"]
             for d in ("ref", "ref2")]
        assert h[0] == h[1]

    def test_detect_logreg_and_explain_refusal(self, corpus, capsys):
        out = corpus / "det_lr"
        assert run("detect", "--reference", corpus / "ref" / "reference_model.json",
                   "--table", corpus / "synth" / "disease.csv", "--model", "logreg",
                   "--folds", 5, "--out", out) == 0
        printed = capsys.readouterr().out
        assert printed == (out / "metrics.csv").read_text()
        rows = read_rows(out / "metrics.csv")
        assert [r["split"] for r in rows] == ["dev", "dev_speaker_mv", "test", "test_speaker_mv"]
        assert float(rows[2]["accuracy"]) >= 85
        assert run("explain", "--reference", corpus / "ref" / "reference_model.json",
                   "--detect-dir", out, "--table", corpus / "synth" / "disease.csv",
                   "--out", corpus / "exp_lr") == cli.EXIT_VALIDATION

    def test_detect_nam_then_explain(self, corpus):
        out = corpus / "det_nam"
        assert run("detect", "--reference", corpus / "ref" / "reference_model.json",
                   "--table", corpus / "synth" / "disease.csv", "--folds", 5,
                   "--arch", "three_layer_64_64_32", "--activation", "relu", "--epochs", 5,
                   "--ensemble-size", 1, "--out", out) == 0
        assert (out / "model.nam").is_file() and (out / "shapes.json").is_file()
        assert run("explain", "--reference", corpus / "ref" / "reference_model.json",
                   "--detect-dir", out, "--table", corpus / "synth" / "disease.csv",
                   "--out", corpus / "exp") == 0
        lines = (corpus / "exp" / "explanations.jsonl").read_text().splitlines()
        assert len(lines) == 240
        for line in lines[:20]:
            e = json.loads(line)
            assert abs(e["logit"] - e["intercept"] - sum(e["contributions"].values())) < 1e-9

    def test_radar_with_overlays(self, corpus):
        assert run("radar", "--reference", corpus / "ref" / "reference_model.json",
                   "--table", corpus / "synth" / "disease.csv", "--out", corpus / "radar") == 0
        svg = (corpus / "radar" / "radar.svg").read_text()
        assert svg.count("<polygon") == 4
        assert 'data-label="patient"' in svg


class TestExitCodes:
    def test_bad_choice_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("detect", "--score", "bogus", "--out", tmp_path)
        assert exc.value.code == 2

    def test_missing_input_is_data_error(self, tmp_path):
        assert run("reference", "--table", tmp_path / "nope.csv", "--out", tmp_path) == 3

    def test_malformed_table_is_validation_error(self, tmp_path):
        (tmp_path / "bad.csv").write_text("sample_id,foo\nx,1\n")
        assert run("reference", "--table", tmp_path / "bad.csv", "--out", tmp_path / "o") == 2

    def test_numeric_failure(self, corpus, monkeypatch, tmp_path):
        def boom(*a, **k):
            raise NumericError("diverged")
        monkeypatch.setattr(cli, "build_reference", boom)
        assert run("reference", "--table", corpus / "synth" / "reference.csv",
                   "--out", tmp_path) == 4

    def test_thread_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv("REFSPEECH_THREADS", "3")
        assert cli.resolve_threads(1) == 3
        monkeypatch.setenv("REFSPEECH_THREADS", "many")
        run("synth", "--profile", "silence", "--n", 1, "--out", tmp_path / "wav")
        assert run("extract", "--audio-dir", tmp_path / "wav", "--task", "sustained_vowel",
                   "--out", tmp_path / "feat") == 2
        monkeypatch.delenv("REFSPEECH_THREADS")
        assert cli.resolve_threads(4) == 4
