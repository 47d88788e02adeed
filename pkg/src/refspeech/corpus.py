"""Sample records, feature tables, ingestion and speaker-disjoint fold plans."""

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .rng import derive_rng

METADATA_COLUMNS = ("sample_id", "speaker_id", "dataset_id", "task", "gender", "age", "label")
EXCLUDED_COLUMN = "excluded"
TASKS = ("sustained_vowel", "picture_description")
GENDERS = ("F", "M")
LABELS = ("control", "patient", "unlabeled")

VOICE_QUALITY_FEATURES = (
    "meanF0", "stdevF0", "HNR",
    "localJitter", "localabsoluteJitter", "rapJitter", "ppq5Jitter",
    "localShimmer", "localdbShimmer", "apq3Shimmer", "aqpq5Shimmer", "apq11Shimmer",
)
VOCAL_TRACT_FEATURES = tuple(
    f"F{k}_{stat}" for k in range(1, 5) for stat in ("mean", "median")
)
RHYTHM_FEATURES = (
    "speech_rate", "articulation_rate", "avg_syllable_duration", "mean_pause_duration",
    "mean_speech_duration", "silence_rate", "silence_to_speech_ratio", "mean_silence_count",
)
CONTENT_FEATURES = (
    "content_density", "idea_density", "honore", "brunet", "ttr",
    "discourse_marker_rate", "polarity", "repetition_ratio", "first_person_ratio",
)
# Only these groups are meaningful on sustained vowels.
VOWEL_ADMISSIBLE = frozenset(VOICE_QUALITY_FEATURES + VOCAL_TRACT_FEATURES)
_VOWEL_FORBIDDEN = frozenset(RHYTHM_FEATURES + CONTENT_FEATURES)


class MissingColumn(ValidationError):
    def __init__(self, column):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class DuplicateSampleId(ValidationError):
    def __init__(self, sample_id, row=None):
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"duplicate sample_id {sample_id!r}{where}")
        self.sample_id = sample_id
        self.row = row


class MalformedNumber(ValidationError):
    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"row {r}, column {c!r}: {v!r}" for r, c, v in self.problems]
        super().__init__("unparseable or non-finite numbers:\n  " + "\n  ".join(lines))


class InvalidRecord(ValidationError):
    pass


class TooFewSpeakers(DataError):
    pass


def parse_finite(text):
    """Parse a decimal string into a finite float; raise ValueError otherwise."""
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("", "0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def format_number(value):
    """Shortest decimal string that parses back to exactly ``value``."""
    return repr(float(value))


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    speaker_id: str
    dataset_id: str
    task: str
    gender: str
    age: int | None = None
    label: str = "unlabeled"
    features: dict = field(default_factory=dict)
    excluded: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidRecord(f"{self.sample_id}: unknown task {self.task!r}")
        if self.gender not in GENDERS:
            raise InvalidRecord(f"{self.sample_id}: unknown gender {self.gender!r}")
        if self.label not in LABELS:
            raise InvalidRecord(f"{self.sample_id}: unknown label {self.label!r}")
        for name, value in self.features.items():
            if not math.isfinite(value):
                raise InvalidRecord(f"{self.sample_id}: non-finite value for {name!r}")
        if self.task == "sustained_vowel":
            bad = _VOWEL_FORBIDDEN.intersection(self.features)
            if bad:
                raise InvalidRecord(
                    f"{self.sample_id}: vowel samples cannot carry {sorted(bad)}"
                )

    @property
    def stratum(self):
        return (self.gender, self.dataset_id)


class FeatureTable:
    """Ordered feature schema plus immutable rows.

    Missing feature values are simply absent from a row's ``features``;
    :meth:`matrix` renders them as NaN for numeric work.
    """

    def __init__(self, schema, rows):
        self.schema = tuple(schema)
        self.rows = tuple(rows)
        known = set(self.schema)
        if len(known) != len(self.schema):
            raise ValidationError("duplicate feature names in schema")
        overlap = known.intersection(METADATA_COLUMNS + (EXCLUDED_COLUMN,))
        if overlap:
            raise ValidationError(f"feature names clash with metadata: {sorted(overlap)}")
        seen = set()
        for i, row in enumerate(self.rows):
            if row.sample_id in seen:
                raise DuplicateSampleId(row.sample_id, i)
            seen.add(row.sample_id)
            extra = set(row.features) - known
            if extra:
                raise ValidationError(f"{row.sample_id}: features outside schema {sorted(extra)}")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureTable)
            and self.schema == other.schema
            and self.rows == other.rows
        )

    def __repr__(self):
        return f"FeatureTable({len(self.rows)} rows, {len(self.schema)} features)"

    @property
    def sample_ids(self):
        return [r.sample_id for r in self.rows]

    def matrix(self, features=None):
        features = self.schema if features is None else tuple(features)
        out = np.full((len(self.rows), len(features)), np.nan)
        for i, row in enumerate(self.rows):
            for j, name in enumerate(features):
                if name in row.features:
                    out[i, j] = row.features[name]
        return out

    def column(self, name):
        return self.matrix([name])[:, 0]

    def filter(self, predicate):
        return FeatureTable(self.schema, [r for r in self.rows if predicate(r)])

    def select_features(self, names):
        names = tuple(names)
        missing = [n for n in names if n not in self.schema]
        if missing:
            raise ValidationError(f"features not in schema: {missing}")
        rows = [
            replace(r, features={n: r.features[n] for n in names if n in r.features})
            for r in self.rows
        ]
        return FeatureTable(names, rows)

    def with_matrix(self, schema, values):
        """New table with the same metadata and features replaced by ``values``.

        NaN entries become missing values.
        """
        values = np.asarray(values, dtype=float)
        rows = []
        for row, vec in zip(self.rows, values):
            feats = {n: float(v) for n, v in zip(schema, vec) if not np.isnan(v)}
            rows.append(replace(row, features=feats))
        return FeatureTable(schema, rows)

    def concat(self, other):
        schema = list(self.schema) + [n for n in other.schema if n not in self.schema]
        return FeatureTable(schema, self.rows + other.rows)

    def complete_rows(self, features=None):
        """Boolean mask of rows that have every requested feature."""
        return ~np.isnan(self.matrix(features)).any(axis=1)

    def labels(self):
        return np.array([r.label for r in self.rows])

    def binary_labels(self):
        return np.array([1 if r.label == "patient" else 0 for r in self.rows])


# -- I/O ---------------------------------------------------------------------


def _record_from_fields(fields, features, row_index):
    age_text = (fields.get("age") or "").strip()
    age = None
    if age_text:
        try:
            age = int(age_text)
        except ValueError:
            raise MalformedNumber([(row_index, "age", age_text)]) from None
    try:
        excluded = _parse_bool(fields.get(EXCLUDED_COLUMN, "") or "")
    except ValueError:
        raise InvalidRecord(f"row {row_index}: bad excluded flag") from None
    return SampleRecord(
        sample_id=fields["sample_id"],
        speaker_id=fields["speaker_id"],
        dataset_id=fields["dataset_id"],
        task=fields["task"],
        gender=fields["gender"],
        age=age,
        label=fields["label"] or "unlabeled",
        features=features,
        excluded=excluded,
    )


def _check_unique(rows):
    seen = set()
    for i, row in enumerate(rows):
        if row.sample_id in seen:
            raise DuplicateSampleId(row.sample_id, i + 1)
        seen.add(row.sample_id)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(METADATA_COLUMNS[0]) from None
        header = [h.strip() for h in header]
        for col in METADATA_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        schema = [h for h in header if h not in METADATA_COLUMNS and h != EXCLUDED_COLUMN]
        rows, problems = [], []
        for line_no, values in enumerate(reader, start=1):
            if not values:
                continue
            if len(values) != len(header):
                raise ValidationError(
                    f"row {line_no}: expected {len(header)} fields, got {len(values)}"
                )
            fields = dict(zip(header, values))
            features = {}
            for name in schema:
                text = fields[name].strip()
                if not text:
                    continue
                try:
                    features[name] = parse_finite(text)
                except ValueError:
                    problems.append((line_no, name, text))
            if not problems:
                rows.append(_record_from_fields(fields, features, line_no))
        if problems:
            raise MalformedNumber(problems)
    _check_unique(rows)
    return FeatureTable(schema, rows)


def read_jsonl(path):
    rows, schema, problems = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            for col in METADATA_COLUMNS:
                if col not in obj:
                    raise MissingColumn(col)
            features = {}
            for name, value in (obj.get("features") or {}).items():
                if name not in schema:
                    schema.append(name)
                if value is None:
                    continue
                try:
                    features[name] = parse_finite(str(value))
                except ValueError:
                    problems.append((line_no, name, value))
            fields = {k: ("" if obj[k] is None else str(obj[k])) for k in METADATA_COLUMNS}
            fields[EXCLUDED_COLUMN] = str(obj.get(EXCLUDED_COLUMN, False))
            if not problems:
                rows.append(_record_from_fields(fields, features, line_no))
    if problems:
        raise MalformedNumber(problems)
    _check_unique(rows)
    return FeatureTable(schema, rows)


def load_feature_table(path, format=None):
    """Load a table from CSV or JSON-lines; ``format`` defaults to the suffix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv")
    if fmt == "csv":
        return read_csv(path)
    if fmt == "jsonl":
        return read_jsonl(path)
    raise ValidationError(f"unknown table format {fmt!r}")


def _row_cells(row, schema, with_excluded):
    cells = [
        row.sample_id, row.speaker_id, row.dataset_id, row.task, row.gender,
        "" if row.age is None else str(row.age), row.label,
    ]
    if with_excluded:
        cells.append("true" if row.excluded else "false")
    cells.extend(format_number(row.features[n]) if n in row.features else "" for n in schema)
    return cells


def write_csv(table, path):
    with_excluded = any(r.excluded for r in table.rows)
    header = list(METADATA_COLUMNS) + ([EXCLUDED_COLUMN] if with_excluded else []) + list(table.schema)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in table.rows:
            writer.writerow(_row_cells(row, table.schema, with_excluded))


def write_jsonl(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in table.rows:
            obj = {
                "sample_id": row.sample_id, "speaker_id": row.speaker_id,
                "dataset_id": row.dataset_id, "task": row.task, "gender": row.gender,
                "age": row.age, "label": row.label, "excluded": row.excluded,
                "features": {n: row.features[n] for n in table.schema if n in row.features},
            }
            fh.write(json.dumps(obj) + "\n")


def save_feature_table(table, path, format=None):
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv")
    if fmt == "csv":
        write_csv(table, path)
    elif fmt == "jsonl":
        write_jsonl(table, path)
    else:
        raise ValidationError(f"unknown table format {fmt!r}")


# -- folds -------------------------------------------------------------------

FOLD_MODES = ("cv_with_dev_fold", "cv_for_tuning_plus_heldout_test")


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignment: dict
    mode: str = "cv_with_dev_fold"
    seed: int = 0

    def fold_of(self, speaker_id):
        return self.assignment[speaker_id]

    def sample_folds(self, table):
        """Fold index per row of ``table`` (speaker lookup)."""
        try:
            return np.array([self.assignment[r.speaker_id] for r in table.rows], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"speaker {exc.args[0]!r} has no fold") from None

    def to_dict(self):
        return {
            "n_folds": self.n_folds,
            "assignment": dict(sorted(self.assignment.items())),
            "mode": self.mode,
            "seed": self.seed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["n_folds"]), {str(k): int(v) for k, v in obj["assignment"].items()},
                   obj.get("mode", "cv_with_dev_fold"), int(obj.get("seed", 0)))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _speaker_summary(table):
    labels, genders, ages = {}, {}, defaultdict(list)
    for row in table.rows:
        spk = row.speaker_id
        if labels.setdefault(spk, row.label) != row.label:
            raise ValidationError(f"speaker {spk!r} has samples with different labels")
        if genders.setdefault(spk, row.gender) != row.gender:
            raise ValidationError(f"speaker {spk!r} has samples with different genders")
        if row.age is not None:
            ages[spk].append(row.age)
    age = {s: (float(np.median(ages[s])) if ages[s] else None) for s in labels}
    return labels, genders, age


def make_folds(table, n_folds=10, seed=0, mode="cv_with_dev_fold"):
    """Speaker-disjoint folds balanced on (label, gender), then age.

    Speakers are dealt greedily: each goes to the fold holding the fewest
    speakers of its own (label, gender) stratum, then of its label, then in
    total; remaining ties follow a seeded fold order. Speakers inside a
    stratum are dealt in age order so every fold gets a similar age spread.
    """
    if n_folds < 2:
        raise ValidationError("n_folds must be >= 2")
    if mode not in FOLD_MODES:
        raise ValidationError(f"unknown fold mode {mode!r}")
    labels, genders, ages = _speaker_summary(table)
    per_label = Counter(labels.values())
    for label in ("control", "patient"):
        if per_label[label] < n_folds:
            raise TooFewSpeakers(
                f"{per_label[label]} {label} speakers for {n_folds} folds"
            )
    rng = derive_rng(seed, "folds")
    rank = rng.permutation(n_folds)
    tiebreak = {s: k for k, s in enumerate(rng.permutation(sorted(labels)))}

    strata = defaultdict(list)
    for spk in labels:
        strata[(labels[spk], genders[spk])].append(spk)

    stratum_count = defaultdict(lambda: np.zeros(n_folds, dtype=int))
    label_count = defaultdict(lambda: np.zeros(n_folds, dtype=int))
    total = np.zeros(n_folds, dtype=int)
    assignment = {}
    for key in sorted(strata):
        members = sorted(
            strata[key],
            key=lambda s: (ages[s] is None, ages[s] or 0.0, tiebreak[s]),
        )
        for spk in members:
            sc, lc = stratum_count[key], label_count[key[0]]
            fold = min(range(n_folds), key=lambda f: (sc[f], lc[f], total[f], rank[f]))
            assignment[spk] = fold
            sc[fold] += 1
            lc[fold] += 1
            total[fold] += 1
    return FoldPlan(n_folds, assignment, mode, int(seed))
