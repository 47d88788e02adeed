import numpy as np
import pytest
from hypothesis import given, strategies as st

from refspeech.corpus import (FeatureTable, FoldPlan, InvalidRecord, MalformedNumber,
                              MissingColumn, DuplicateSampleId, SampleRecord, TooFewSpeakers,
                              load_feature_table, make_folds, save_feature_table)
from refspeech.errors import ValidationError

HEADER = "sample_id,speaker_id,dataset_id,task,gender,age,label"


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def speakers_table(n_ctrl, n_pat, per_speaker=1, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_ctrl + n_pat):
        label = "control" if s < n_ctrl else "patient"
        gender = "F" if s % 2 == 0 else "M"
        age = int(rng.integers(40, 80))
        for k in range(per_speaker):
            rows.append(SampleRecord(f"s{s}-{k}", f"s{s}", "d", "sustained_vowel", gender, age,
                                     label, {"meanF0": float(rng.normal(150, 20))}))
    return FeatureTable(["meanF0"], rows)


class TestLoad:
    def test_well_formed_csv(self, tmp_path):
        p = write(tmp_path, HEADER + ",meanF0,HNR\n"
                  "a,s1,d,sustained_vowel,F,60,control,200.5,18\n"
                  "b,s2,d,sustained_vowel,M,,patient,120,\n"
                  "c,s3,d,sustained_vowel,F,55,control,210,20.25\n")
        t = load_feature_table(p)
        assert len(t) == 3
        assert t.schema == ("meanF0", "HNR")
        assert t.rows[1].age is None
        assert "HNR" not in t.rows[1].features

    def test_round_trip_of_writer_output(self, tmp_path):
        t = speakers_table(3, 3)
        p = tmp_path / "out.csv"
        save_feature_table(t, p)
        assert load_feature_table(p) == t
        q = tmp_path / "out.jsonl"
        save_feature_table(t, q)
        assert load_feature_table(q) == t

    def test_missing_speaker_column(self, tmp_path):
        p = write(tmp_path, "sample_id,dataset_id,task,gender,age,label,f\na,d,sustained_vowel,F,1,control,1\n")
        with pytest.raises(MissingColumn) as exc:
            load_feature_table(p)
        assert exc.value.column == "speaker_id"

    def test_overflow_is_malformed(self, tmp_path):
        p = write(tmp_path, HEADER + ",f\na,s,d,sustained_vowel,F,1,control,1e309\n")
        with pytest.raises(MalformedNumber) as exc:
            load_feature_table(p)
        assert exc.value.problems == [(1, "f", "1e309")]

    def test_garbage_number(self, tmp_path):
        p = write(tmp_path, HEADER + ",f\na,s,d,sustained_vowel,F,1,control,abc\n")
        with pytest.raises(MalformedNumber):
            load_feature_table(p)

    def test_duplicate_sample_id(self, tmp_path):
        p = write(tmp_path, HEADER + ",f\na,s,d,sustained_vowel,F,1,control,1\n"
                  "a,s,d,sustained_vowel,F,1,control,2\n")
        with pytest.raises(DuplicateSampleId):
            load_feature_table(p)

    def test_excluded_flag_round_trip(self, tmp_path):
        rows = [SampleRecord("a", "s", "d", "sustained_vowel", "F", None, "control", {}, True),
                SampleRecord("b", "t", "d", "sustained_vowel", "M", 3, "patient", {"f": 1.0})]
        t = FeatureTable(["f"], rows)
        p = tmp_path / "x.csv"
        save_feature_table(t, p)
        assert load_feature_table(p).rows[0].excluded

    def test_vowel_rows_reject_content_features(self):
        with pytest.raises(InvalidRecord):
            SampleRecord("a", "s", "d", "sustained_vowel", "F", None, "control", {"ttr": 0.5})

    def test_non_finite_feature_rejected(self):
        with pytest.raises(InvalidRecord):
            SampleRecord("a", "s", "d", "sustained_vowel", "F", None, "control",
                         {"meanF0": float("inf")})

    def test_feature_outside_schema(self):
        row = SampleRecord("a", "s", "d", "sustained_vowel", "F", None, "control", {"g": 1.0})
        with pytest.raises(ValidationError):
            FeatureTable(["f"], [row])

    @given(st.lists(st.decimals(min_value=-1e6, max_value=1e6, places=4, allow_nan=False),
                    min_size=1, max_size=8))
    def test_decimal_round_trip(self, tmp_path_factory, values):
        rows = [SampleRecord(f"r{i}", f"s{i}", "d", "sustained_vowel", "F", None, "control",
                             {"f": float(v)}) for i, v in enumerate(values)]
        t = FeatureTable(["f"], rows)
        p = tmp_path_factory.mktemp("rt") / "t.csv"
        save_feature_table(t, p)
        text = p.read_text()
        save_feature_table(load_feature_table(p), p)
        assert p.read_text() == text


class TestFolds:
    def test_one_control_and_one_patient_per_fold(self):
        plan = make_folds(speakers_table(10, 10), n_folds=10, seed=3)
        t = speakers_table(10, 10)
        for f in range(10):
            labels = [r.label for r in t.rows if plan.fold_of(r.speaker_id) == f]
            assert sorted(labels) == ["control", "patient"]

    def test_speaker_samples_share_a_fold(self):
        t = speakers_table(12, 12, per_speaker=3)
        plan = make_folds(t, n_folds=4, seed=0)
        folds = {}
        for r, f in zip(t.rows, plan.sample_folds(t)):
            folds.setdefault(r.speaker_id, set()).add(int(f))
        assert all(len(v) == 1 for v in folds.values())

    def test_too_few_speakers(self):
        with pytest.raises(TooFewSpeakers):
            make_folds(speakers_table(10, 5), n_folds=10)

    def test_deterministic_and_serializable(self):
        t = speakers_table(15, 15)
        a, b = make_folds(t, 5, seed=7), make_folds(t, 5, seed=7)
        assert a == b
        assert FoldPlan.from_json(a.to_json()) == a

    @given(st.integers(4, 30), st.integers(4, 30), st.integers(2, 4), st.integers(0, 10 ** 6))
    def test_balance_within_one_speaker_per_stratum(self, n_ctrl, n_pat, n_folds, seed):
        t = speakers_table(n_ctrl, n_pat)
        plan = make_folds(t, n_folds, seed=seed)
        for label in ("control", "patient"):
            for g in ("F", "M"):
                spk = {r.speaker_id for r in t.rows if r.label == label and r.gender == g}
                counts = np.bincount([plan.fold_of(s) for s in spk], minlength=n_folds)
                assert counts.max() - counts.min() <= 1
