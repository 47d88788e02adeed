"""Lexical-richness and content measures computed from word transcripts.

Transcripts are token lists, optionally carrying tags from the 12-tag
universal part-of-speech set. No tagger is bundled: the two POS-based
densities are only available for tagged input.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import DataError, ValidationError

log = logging.getLogger(__name__)

UNIVERSAL_TAGS = frozenset(
    ("NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PRT", ".", "X")
)
OPEN_CLASS = frozenset(("NOUN", "VERB", "ADJ", "ADV"))
CLOSED_CLASS = frozenset(("DET", "PRON", "CONJ", "ADP"))
IDEA_TAGS = frozenset(("VERB", "ADJ", "ADV", "ADP", "CONJ"))
PUNCT_TAG = "."
FIRST_PERSON = frozenset(("i", "me", "mine", "my"))


class EmptyTranscript(DataError):
    pass


class HonoreUndefined(DataError):
    """Every word type occurs exactly once, so the statistic divides by zero."""


class MissingPosTags(DataError):
    pass


@dataclass(frozen=True)
class Transcript:
    """Ordered ``(word, tag)`` tokens; ``tag`` is None for untagged input.

    ``sentence_breaks`` holds the indices of tokens that close a sentence.
    Punctuation tokens (tag ``"."``) are kept for sentence structure but are
    not counted as words.
    """

    sample_id: str
    tokens: tuple
    sentence_breaks: tuple | None = None

    def __post_init__(self):
        toks = tuple((str(w), p) for w, p in self.tokens)
        for w, p in toks:
            if p is not None and p not in UNIVERSAL_TAGS:
                raise ValidationError(f"{self.sample_id}: unknown POS tag {p!r} on {w!r}")
        object.__setattr__(self, "tokens", toks)
        if self.sentence_breaks is not None:
            object.__setattr__(self, "sentence_breaks", tuple(int(i) for i in self.sentence_breaks))

    @classmethod
    def from_words(cls, sample_id, words, tags=None, sentence_breaks=None):
        tags = [None] * len(words) if tags is None else list(tags)
        if len(tags) != len(words):
            raise ValidationError("words and tags differ in length")
        return cls(sample_id, tuple(zip(words, tags)), sentence_breaks)

    @property
    def words(self):
        """Lowercased word tokens, punctuation removed."""
        return [w.lower() for w, p in self.tokens if p != PUNCT_TAG]

    @property
    def tagged(self):
        return bool(self.tokens) and all(p is not None for _, p in self.tokens)

    @property
    def n_sentences(self):
        if not self.sentence_breaks:
            return 0
        n = len(set(self.sentence_breaks))
        if max(self.sentence_breaks) < len(self.tokens) - 1:
            n += 1
        return n


def _words_or_raise(t):
    words = t.words
    if not words:
        raise EmptyTranscript(f"{t.sample_id}: no words")
    return words


def type_token_ratio(n_tokens, n_types):
    return n_types / n_tokens


def brunet_index(n_tokens, n_types):
    return n_tokens ** (n_types ** -0.165)


def honore_statistic(n_tokens, n_types, n_hapax):
    if n_hapax == n_types:
        raise HonoreUndefined("all word types are hapax legomena")
    return 100.0 * math.log(n_tokens) / (1.0 - n_hapax / n_types)


def lexical_richness(t):
    """TTR, Brunet's index and Honoré's statistic (natural log)."""
    words = _words_or_raise(t)
    counts = Counter(words)
    n, v = len(words), len(counts)
    v1 = sum(1 for c in counts.values() if c == 1)
    return {
        "ttr": type_token_ratio(n, v),
        "brunet": brunet_index(n, v),
        "honore": honore_statistic(n, v, v1),
    }


@lru_cache(maxsize=None)
def discourse_markers():
    """Bundled marker list as tuples of words, longest first."""
    text = resources.files("refspeech.data").joinpath("discourse_markers.txt").read_text("utf-8")
    items = {tuple(line.split()) for line in text.splitlines()
             if line.strip() and not line.startswith("#")}
    return tuple(sorted(items, key=lambda m: (-len(m), m)))


@lru_cache(maxsize=None)
def valence_lexicon():
    text = resources.files("refspeech.data").joinpath("valence.tsv").read_text("utf-8")
    lex = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        word, value = line.split("\t")
        lex[word] = float(value)
    return lex


def count_markers(words, markers=None):
    """Non-overlapping marker matches, preferring the longest at each position."""
    markers = discourse_markers() if markers is None else markers
    i, n = 0, 0
    while i < len(words):
        for m in markers:
            if tuple(words[i:i + len(m)]) == m:
                n += 1
                i += len(m)
                break
        else:
            i += 1
    return n


def repetition_ratio(words):
    """Share of tokens that repeat a word already seen earlier."""
    return (len(words) - len(set(words))) / len(words)


def pos_densities(t):
    """Content density (open/closed class) and idea density (proposition tags/words)."""
    if not t.tagged:
        raise MissingPosTags(f"{t.sample_id}: transcript has no POS tags")
    tags = [p for _, p in t.tokens if p != PUNCT_TAG]
    if not tags:
        raise EmptyTranscript(f"{t.sample_id}: no words")
    n_open = sum(p in OPEN_CLASS for p in tags)
    n_closed = sum(p in CLOSED_CLASS for p in tags)
    out = {"idea_density": sum(p in IDEA_TAGS for p in tags) / len(tags)}
    if n_closed:
        out["content_density"] = n_open / n_closed
    else:
        log.warning("%s: no closed-class words, content density omitted", t.sample_id)
    return out


def content_measures(t):
    """Content measures; the POS densities are omitted for untagged input."""
    words = _words_or_raise(t)
    n = len(words)
    lex = valence_lexicon()
    scores = [lex[w] for w in words if w in lex]
    n_sent = t.n_sentences
    out = {
        "discourse_marker_rate": count_markers(words) / (n_sent if n_sent else n),
        "polarity": sum(scores) / len(scores) if scores else 0.0,
        "repetition_ratio": repetition_ratio(words),
        "first_person_ratio": sum(w in FIRST_PERSON for w in words) / n,
    }
    try:
        out.update(pos_densities(t))
    except MissingPosTags:
        log.info("%s: untagged transcript, POS densities skipped", t.sample_id)
    return out


def text_features(t):
    """All content-related features available for ``t``."""
    feats = content_measures(t)
    words = _words_or_raise(t)
    counts = Counter(words)
    n, v = len(words), len(counts)
    v1 = sum(1 for c in counts.values() if c == 1)
    feats["ttr"] = type_token_ratio(n, v)
    feats["brunet"] = brunet_index(n, v)
    try:
        feats["honore"] = honore_statistic(n, v, v1)
    except HonoreUndefined:
        log.warning("%s: Honore statistic undefined, omitted", t.sample_id)
    return feats


# -- JSON lines ----------------------------------------------------------------


def transcript_from_dict(obj):
    try:
        tokens = [(tok["w"], tok.get("pos")) for tok in obj["tokens"]]
        return Transcript(str(obj["sample_id"]), tuple(tokens), obj.get("sentence_breaks"))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed transcript record: {exc}") from None


def transcript_to_dict(t):
    obj = {"sample_id": t.sample_id,
           "tokens": [{"w": w, **({"pos": p} if p is not None else {})} for w, p in t.tokens]}
    if t.sentence_breaks is not None:
        obj["sentence_breaks"] = list(t.sentence_breaks)
    return obj


def read_transcripts(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                t = transcript_from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            out[t.sample_id] = t
    return out


def write_transcripts(transcripts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(transcript_to_dict(t), sort_keys=True) + "\n")
