import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from refspeech.synth import synth_tokens
from refspeech.text import (EmptyTranscript, HonoreUndefined, MissingPosTags, Transcript,
                            brunet_index, content_measures, count_markers, discourse_markers,
                            honore_statistic, lexical_richness, pos_densities, read_transcripts,
                            repetition_ratio, text_features, type_token_ratio, valence_lexicon,
                            write_transcripts)
from refspeech.errors import ValidationError

words = st.lists(st.sampled_from("a b c d e f g the cat dog i my".split()), min_size=1,
                 max_size=60)


def tr(ws, tags=None, breaks=None):
    return Transcript.from_words("t", ws, tags, breaks)


class TestLexicalRichness:
    def test_ttr(self):
        assert lexical_richness(tr(["the", "cat", "the"]))["ttr"] == pytest.approx(2 / 3)

    def test_brunet_calculator_value(self):
        assert brunet_index(100, 50) == pytest.approx(11.19, abs=0.01)

    def test_honore_calculator_value(self):
        assert honore_statistic(10, 5, 0) == pytest.approx(230.26, abs=0.01)

    def test_honore_undefined_when_all_hapax(self):
        with pytest.raises(HonoreUndefined):
            honore_statistic(10, 5, 5)

    def test_empty_transcript(self):
        with pytest.raises(EmptyTranscript):
            lexical_richness(tr([]))

    def test_lowercased_counting(self):
        r = lexical_richness(tr(["The", "the", "Cat"]))
        assert r["ttr"] == pytest.approx(2 / 3)

    @given(words)
    def test_ttr_range_and_distinctness(self, ws):
        ttr = text_features(tr(ws))["ttr"]
        assert 0 < ttr <= 1
        assert (ttr == 1) == (len(set(ws)) == len(ws))

    def test_brunet_increases_with_tokens(self):
        vals = [brunet_index(n, 40) for n in range(50, 501)]
        assert np.all(np.diff(vals) > 0)


class TestContentMeasures:
    def test_first_person_ratio(self):
        assert content_measures(tr(["i", "see", "my", "dog"]))["first_person_ratio"] == 0.5

    def test_repetition_ratio(self):
        assert repetition_ratio(["the", "cat", "the"]) == pytest.approx(1 / 3)

    def test_content_density(self):
        t = tr(["the", "cat", "runs"], ["DET", "NOUN", "VERB"])
        d = pos_densities(t)
        assert d["content_density"] == pytest.approx(2.0)
        assert d["idea_density"] == pytest.approx(1 / 3)

    def test_untagged_densities_raise_but_others_return(self):
        t = tr(["the", "cat", "runs"])
        with pytest.raises(MissingPosTags):
            pos_densities(t)
        out = content_measures(t)
        assert "content_density" not in out and "repetition_ratio" in out

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValidationError):
            tr(["x"], ["NOTATAG"])

    def test_marker_rate_per_sentence(self):
        t = tr(["so", "ok", "the", "cat", ".", "anyway", "done"], breaks=[4])
        assert t.n_sentences == 2
        assert content_measures(t)["discourse_marker_rate"] == pytest.approx(3 / 2)

    def test_marker_rate_falls_back_to_tokens(self):
        assert content_measures(tr(["so", "the", "cat", "sat"]))["discourse_marker_rate"] == 0.25

    def test_multiword_markers_are_not_double_counted(self):
        multi = [m for m in discourse_markers() if len(m) > 1][0]
        assert count_markers(list(multi)) == 1

    def test_polarity_zero_without_matches(self):
        assert content_measures(tr(["zzz", "qqq"]))["polarity"] == 0.0

    @given(words)
    def test_polarity_bounded(self, ws):
        assert -1 <= content_measures(tr(ws))["polarity"] <= 1

    def test_lexicon_valences_bounded(self):
        vals = np.array(list(valence_lexicon().values()))
        assert vals.size > 50 and np.all(np.abs(vals) <= 1)

    @given(st.integers(1, 300), st.data())
    def test_types_over_tokens_plus_repetition_is_one(self, n, data):
        v = data.draw(st.integers(1, n))
        ws = synth_tokens(n, v, seed=data.draw(st.integers(0, 1000)))
        assert len(set(ws)) == v
        assert v / n + repetition_ratio(ws) == pytest.approx(1.0, abs=1e-15)


class TestTextFeatures:
    def test_honore_omitted_with_warning(self, caplog):
        out = text_features(tr(["a", "b", "c"]))
        assert "honore" not in out and out["ttr"] == 1.0
        assert "Honore" in caplog.text

    def test_jsonl_round_trip(self, tmp_path):
        ts = [Transcript.from_words("a", ["the", "cat", "."], ["DET", "NOUN", "."], [2]),
              Transcript.from_words("b", ["so", "ok"])]
        p = tmp_path / "t.jsonl"
        write_transcripts(ts, p)
        back = read_transcripts(p)
        assert back["a"] == ts[0] and back["b"] == ts[1]
        assert math.isclose(text_features(back["a"])["ttr"], 1.0)
