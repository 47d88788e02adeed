"""End-to-end stages: feature extraction, reference building and detection."""

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .acoustics import (check_f0_stability, extract_period_track, find_stable_segment,
                        formant_features, read_wav, rhythm_features, segment_vowel,
                        voice_quality_features)
from .corpus import (CONTENT_FEATURES, RHYTHM_FEATURES, VOCAL_TRACT_FEATURES,
                     VOICE_QUALITY_FEATURES, FeatureTable, SampleRecord, make_folds,
                     save_feature_table)
from .deviation import (NORM_METHODS, ReferenceSummary, apply_normalizer, deviation_table,
                        fit_normalizer)
from .errors import DataError, RefSpeechError, ValidationError
from .glassbox import (NamConfig, cross_validate, export_shapes, logreg_train, metrics_csv,
                       nam_train, save_ensemble, tune)
from .radar import radar_svg
from .refstats import (PartitionModel, ReferenceModel, cluster_features, estimate_ri,
                       mahalanobis_outliers, partition_tests, radar_data)
from .rng import derive_seed
from .text import text_features

log = logging.getLogger(__name__)

MIN_PARTITION = 20


class InsufficientPartition(DataError):
    pass


# -- file plumbing ---------------------------------------------------------------------


def write_atomic(path, data):
    """Write text or bytes to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_table_atomic(table, path):
    path = Path(path)
    fmt = "jsonl" if path.suffix in (".jsonl", ".json") else "csv"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        save_feature_table(table, tmp, format=fmt)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj):
    return json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o) if isinstance(o, (set, frozenset)) else list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: list
    seed: int
    artifacts: list = field(default_factory=list)
    started: float = field(default_factory=time.time)

    @property
    def config_hash(self):
        canon = json.dumps({"command": self.command, "config": self.config, "seed": self.seed},
                           sort_keys=True, default=_json_default)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def write(self, out_dir):
        out_dir = Path(out_dir)
        inputs = []
        for p in self.inputs:
            p = Path(p)
            entry = {"path": str(p)}
            if p.is_file():
                entry["sha256"] = sha256_file(p)
            inputs.append(entry)
        artifacts = [{"path": a, "sha256": sha256_file(out_dir / a)}
                     for a in sorted(set(self.artifacts)) if (out_dir / a).is_file()]
        manifest = {
            "command": self.command, "config": self.config, "config_hash": self.config_hash,
            "seed": self.seed, "tool_version": __version__, "inputs": inputs,
            "artifacts": artifacts,
            "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        write_atomic(out_dir / "manifest.json", dump_json(manifest))


# -- extraction ------------------------------------------------------------------------


def exclusion_reason(exc):
    return getattr(exc, "reason", type(exc).__name__)


def vowel_features(audio):
    """Screen a vowel and measure each kept chunk; returns [(span, features)]."""
    report = segment_vowel(audio)
    out = []
    for start, end in report.chunks:
        chunk = audio if report.decision == "kept_whole" and len(report.chunks) == 1 \
            else audio.slice(start, end)
        track = extract_period_track(chunk)
        feats = voice_quality_features(track, [find_stable_segment(track)])
        check_f0_stability(feats)
        feats.update(formant_features(chunk))
        out.append(((start, end), {k: float(v) for k, v in feats.items()}))
    return out


def picture_features(audio, transcript=None):
    """Rhythm and vocal-tract features, voice quality over voiced frames, and
    content features when a transcript is given."""
    feats = dict(rhythm_features(audio))
    feats.update(formant_features(audio))
    try:
        track = extract_period_track(audio)
        feats.update(voice_quality_features(track))
    except DataError as exc:
        log.info("voice-quality features skipped: %s", exc)
    if transcript is not None:
        feats.update(text_features(transcript))
    return {k: float(v) for k, v in feats.items()}


def read_metadata(path):
    """Per-file metadata keyed by file stem."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "file" not in rows[0]:
        raise ValidationError(f"{path}: metadata needs a 'file' column")
    return {Path(r["file"]).stem: r for r in rows}


def _record(stem, meta, task, feats, suffix=""):
    age = (meta.get("age") or "").strip()
    return SampleRecord(
        sample_id=stem + suffix, speaker_id=meta.get("speaker_id") or stem,
        dataset_id=meta.get("dataset_id") or "dataset", task=task,
        gender=meta.get("gender") or "F", age=int(age) if age else None,
        label=meta.get("label") or "unlabeled", features=feats)


def extract_directory(audio_dir, task, transcripts=None, metadata=None, threads=1):
    """Features for every WAV file in ``audio_dir``.

    Returns the table and a list of exclusion records; a failing file never
    stops the batch.
    """
    audio_dir = Path(audio_dir)
    files = sorted(audio_dir.glob("*.wav"))
    if metadata is None and (audio_dir / "metadata.csv").is_file():
        metadata = audio_dir / "metadata.csv"
    meta = read_metadata(metadata) if metadata else {}
    transcripts = transcripts or {}

    def work(path):
        try:
            audio = read_wav(path)
            if task == "sustained_vowel":
                return path, vowel_features(audio), None
            return path, [(None, picture_features(audio, transcripts.get(path.stem)))], None
        except RefSpeechError as exc:
            return path, None, exc

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, files))
    rows, exclusions = [], []
    for path, chunks, exc in results:
        stem = path.stem
        if exc is not None:
            exclusions.append({"sample_id": stem, "file": path.name,
                               "reason": exclusion_reason(exc), "message": str(exc)})
            log.warning("%s excluded: %s", path.name, exc)
            continue
        for k, (span, feats) in enumerate(chunks):
            suffix = f"#c{k}" if len(chunks) > 1 else ""
            rows.append(_record(stem, meta.get(stem, {}), task, feats, suffix))
    schema = []
    for r in rows:
        schema += [f for f in r.features if f not in schema]
    return FeatureTable(_ordered_schema(schema), rows), exclusions


def _ordered_schema(names):
    canon = list(RHYTHM_FEATURES + VOICE_QUALITY_FEATURES + VOCAL_TRACT_FEATURES + CONTENT_FEATURES)
    known = [f for f in canon if f in names]
    return known + sorted(f for f in names if f not in canon)


def exclusions_csv(exclusions):
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["sample_id", "file", "reason", "message"], lineterminator="\n")
    w.writeheader()
    w.writerows(exclusions)
    return buf.getvalue()


# -- reference ---------------------------------------------------------------------------


def task_features(table, task):
    """Features with at least one value among the rows of ``task``."""
    sub = table.filter(lambda r: r.task == task)
    X = sub.matrix()
    return [f for j, f in enumerate(table.schema) if not np.all(np.isnan(X[:, j]))]


def build_reference(table, ct_list=(1.0,), seed=0, method="zscore", n_boot=1000):
    """Outlier screening, per-(gender, task) RIs, summaries and feature clusters."""
    if method not in NORM_METHODS:
        raise ValidationError(f"unknown normalization {method!r}")
    table = table.filter(lambda r: not r.excluded)
    outliers, drop = {}, set()
    for task in sorted({r.task for r in table.rows}):
        sub = table.filter(lambda r, t=task: r.task == t)
        feats = [f for f in task_features(table, task) if f not in CONTENT_FEATURES]
        report = mahalanobis_outliers(sub, feats)
        outliers[task] = report.to_dict()
        drop |= report.excluded
        log.info("%s: %d outliers removed (cutoff %.3f)", task, len(report.excluded), report.cutoff)
    clean = table.filter(lambda r: r.sample_id not in drop)

    normalized = {}
    normalizers = {}
    for m in NORM_METHODS:
        stats = fit_normalizer(clean, m)
        normalizers[m] = stats.to_dict()
        normalized[m] = apply_normalizer(stats, clean)

    partitions = {}
    for task in sorted({r.task for r in clean.rows}):
        feats = task_features(clean, task)
        for gender in ("F", "M"):
            def pick(r, g=gender, t=task):
                return r.gender == g and r.task == t
            part = {m: normalized[m].filter(pick) for m in NORM_METHODS}
            n = len(part[method])
            if n == 0:
                continue
            if n < MIN_PARTITION:
                raise InsufficientPartition(f"partition ({gender}, {task}) has {n} samples, "
                                            f"need {MIN_PARTITION}")
            ris = {}
            X = part[method].matrix(feats)
            for j, f in enumerate(feats):
                ris[f] = estimate_ri(X[:, j], seed=derive_seed(seed, f"ri:{gender}:{task}:{f}"),
                                     n_boot=n_boot, feature=f, partition=(gender, task))
            summaries = {}
            for m in NORM_METHODS:
                summaries[m] = ReferenceSummary.from_table(
                    part[m], feats, ris if m == method else None).to_dict()
            clusters = {}
            for ct in ct_list:
                clusters[float(ct)] = cluster_features(part[method], ct, feats)
            partitions[(gender, task)] = PartitionModel(gender, task, n, ris, summaries, clusters,
                                                        ri_space=method)
    features = tuple(f for f in clean.schema if any(f in p.ris for p in partitions.values()))
    model = ReferenceModel(features, partitions, normalizers, method, int(seed), outliers)
    tests = partition_tests(clean, features)
    return model, tests


def partition_tests_csv(tests):
    buf = io.StringIO()
    buf.write("task,feature,U,p_two_sided,split\n")
    for (task, f), res in sorted(tests.items()):
        buf.write(f"{task},{f},{res['U']:.1f},{res['p_two_sided']:.6g},{int(res['split'])}\n")
    return buf.getvalue()


def reference_radar(model, overlays=None):
    """SVG with one chart per partition. ``overlays`` maps (gender, task) to
    {label: per-feature values} in the same reference-z scale."""
    charts = []
    for key in sorted(model.partitions):
        part = model.partitions[key]
        feats = [f for f in model.features if f in part.ris]
        data = radar_data(part, feats)
        charts.append((f"{key[0]} / {key[1]}", data, (overlays or {}).get(key, {})))
    return radar_svg(charts)


def group_overlays(model, table):
    """Mean of each label group per partition, in reference-z units.

    The table is normalized with its own control strata, using the
    reference's normalization method.
    """
    method = model.method
    normed = apply_normalizer(fit_normalizer(table, method), table)
    overlays = {}
    for key, part in model.partitions.items():
        feats = [f for f in model.features if f in part.ris]
        stats = part.summaries[part.ri_space]
        sub = normed.filter(lambda r, k=key: (r.gender, r.task) == k)
        if not len(sub):
            continue
        groups = {}
        for label in sorted({r.label for r in sub.rows}):
            X = sub.filter(lambda r, lab=label: r.label == lab).matrix(feats)
            means = np.nanmean(X, axis=0) if X.size else np.full(len(feats), np.nan)
            groups[label] = [None if np.isnan(v) else (v - stats["mu"][f]) / (stats["sigma"][f] or 1.0)
                             for v, f in zip(means, feats)]
        overlays[key] = groups
    return overlays


# -- detection ---------------------------------------------------------------------------


def prototype_features(model, ctrl_table, ct, features):
    """Union over partitions of each cluster's prototype at threshold ``ct``.

    The prototype is the member whose raw standard deviation differs least
    between the reference and the controls of ``ctrl_table``.
    """
    if ct >= 1.0:
        return list(features)
    chosen = set()
    ctrl = ctrl_table.filter(lambda r: r.label == "control")
    for part in model.partitions.values():
        if ct not in part.clusters:
            raise ValidationError(f"reference has no clusters for CT={ct}")
        raw = part.summaries["none"]["sigma"]
        for members in part.clusters[ct].clusters:
            gaps = []
            for f in members:
                if f not in features:
                    continue
                col = ctrl.column(f)
                col = col[~np.isnan(col)]
                if col.size >= 2:
                    gaps.append((abs(raw[f] - col.std(ddof=1)), f))
            if gaps:
                chosen.add(min(gaps)[1])
    return [f for f in features if f in chosen]


@dataclass
class DetectionSetup:
    score: str
    norm: str
    features: list
    summaries: dict
    norm_table: object = None

    def transform(self, train, *others):
        """Normalize with the controls of ``train`` (or of ``norm_table`` when
        set) and score every table against the reference."""
        stats = fit_normalizer(train if self.norm_table is None else self.norm_table, self.norm, self.features)
        out = []
        for t in (train, *others):
            t = apply_normalizer(stats, t.select_features(self.features))
            out.append(deviation_table(t, self.summaries, self.score, self.features))
        return out

    def normalized(self, train, table):
        stats = fit_normalizer(train if self.norm_table is None else self.norm_table, self.norm, self.features)
        return apply_normalizer(stats, table.select_features(self.features))


def detection_setup(model, table, score, norm, ct):
    tasks = {r.task for r in table.rows}
    features = [f for f in model.features if f in table.schema]
    if not features:
        raise ValidationError("no features shared between the reference and the table")
    features = prototype_features(model, table, float(ct), features)
    summaries = {}
    for key, part in model.partitions.items():
        if key[1] in tasks:
            summaries[key] = ReferenceSummary.from_dict(part.summaries[norm])
    return DetectionSetup(score, norm, features, summaries)


def ri_status(value, lower, upper):
    if np.isnan(value):
        return "missing"
    return "below" if value < lower else ("above" if value > upper else "inside")


def detect(model, table, score="ri", norm="zscore", ct=1.0, classifier="nam", n_folds=10,
           seed=0, config=None, mode="cv_with_dev_fold", test_table=None, l2=1e-3,
           tune_budget=0, tune_strategy="random", figure_compat=False):
    """Cross-validated detection on ``table`` against the reference model.

    Normalization statistics come from the training-fold controls, or from
    every control of ``table`` when ``figure_compat`` is set. Returns a dict
    of report objects; ``write_detection`` stores them.
    """
    config = config or NamConfig(seed=seed)
    setup = detection_setup(model, table, score, norm, ct)
    if figure_compat:
        setup.norm_table = table.filter(lambda r: not r.excluded)
    folds = make_folds(table, n_folds=n_folds, seed=seed, mode=mode)

    tuning = None
    if tune_budget and classifier == "nam":
        base = config.to_dict()

        def objective(params):
            cfg = NamConfig.from_dict({**base, **params})
            res = cross_validate(table, folds, cfg, "nam", setup.transform, test_table)
            return res.metrics["dev"]["accuracy"]

        best, history = tune(objective, budget=tune_budget, strategy=tune_strategy,
                             seed=derive_seed(seed, "tune"))
        config = NamConfig.from_dict({**config.to_dict(), **best})
        tuning = {"best": best, "history": [{"params": p, "score": s} for p, s in history]}

    result = cross_validate(table, folds, config, classifier, setup.transform, test_table,
                            l2=l2, with_shapes=classifier == "nam")

    # explanation with the RI status of each normalized input feature
    source = table if mode == "cv_with_dev_fold" else test_table
    normalized = setup.normalized(table.filter(lambda r: not r.excluded), source)
    norm_by_id = {r.sample_id: r.features for r in normalized.rows}
    rows_by_id = {r.sample_id: r for r in source.rows}
    explanations = []
    for sid in sorted(result.explanations):
        e = result.explanations[sid]
        row = rows_by_id[sid]
        summ = setup.summaries.get((row.gender, row.task))
        status = {}
        for f in setup.features:
            v = norm_by_id[sid].get(f, np.nan)
            status[f] = ri_status(v, summ.ri_lb[f], summ.ri_ub[f]) if summ else "unknown"
        explanations.append({"sample_id": sid, "speaker_id": row.speaker_id, "label": row.label,
                             **e, "ri_status": status})

    final = fit_final(table, setup, config, classifier, l2, result)
    return {
        "metrics": result.metrics,
        "metrics_csv": metrics_csv(result.metrics),
        "predictions": result.predictions,
        "explanations": explanations,
        "importance": result.importance,
        "ranking": result.ranking,
        "shapes": result.shapes,
        "folds": folds,
        "features": setup.features,
        "config": config,
        "tuning": tuning,
        "final": final,
        "setup": setup,
    }


def fit_final(table, setup, config, classifier, l2, result):
    """Model trained on every usable sample, for later explanation of new data."""
    usable = table.filter(lambda r: not r.excluded)
    (train,) = setup.transform(usable)
    if classifier == "logreg":
        return logreg_train(train.matrix(), train.binary_labels(), l2=l2,
                            feature_names=train.schema)
    return nam_train(train.matrix(), train.binary_labels(), config, feature_names=train.schema)


def importance_csv(importance, ranking):
    buf = io.StringIO()
    buf.write("rank,feature,importance\n")
    for k, f in enumerate(ranking, 1):
        buf.write(f"{k},{f},{importance[f]:.8g}\n")
    return buf.getvalue()


def predictions_csv(predictions):
    buf = io.StringIO()
    buf.write("sample_id,split,fold,probability\n")
    for p in sorted(predictions, key=lambda p: (p["split"], p["sample_id"], p["fold"])):
        buf.write(f"{p['sample_id']},{p['split']},{p['fold']},{p['probability']:.8f}\n")
    return buf.getvalue()


def write_detection(report, out_dir):
    """Store a detection report; returns the artifact names."""
    out = Path(out_dir)
    files = {
        "metrics.csv": report["metrics_csv"],
        "predictions.csv": predictions_csv(report["predictions"]),
        "importance.csv": importance_csv(report["importance"], report["ranking"]),
        "explanations.jsonl": "".join(json.dumps(e, sort_keys=True, default=_json_default) + "\n"
                                      for e in report["explanations"]),
        "folds.json": report["folds"].to_json() + "\n",
        "pipeline.json": dump_json({
            "score": report["setup"].score, "norm": report["setup"].norm,
            "features": report["features"], "config": report["config"].to_dict(),
            "figure_compat": report["setup"].norm_table is not None,
            "classifier": "logreg" if not hasattr(report["final"], "members") else "nam",
            "tuning": report["tuning"],
        }),
    }
    if report["shapes"]:
        files["shapes.json"] = dump_json([[s.to_dict() for s in fold] for fold in report["shapes"]])
    for name, text in files.items():
        write_atomic(out / name, text)
    final = report["final"]
    if hasattr(final, "members"):
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".model.nam.")
        os.close(fd)
        save_ensemble(final, tmp)
        os.replace(tmp, out / "model.nam")
        files["model.nam"] = None
    else:
        write_atomic(out / "model.json", dump_json({
            "feature_names": list(final.feature_names), "weights": final.weights.tolist(),
            "bias": final.bias, "fill": final.fill.tolist()}))
        files["model.json"] = None
    return sorted(files)


def explain_table(model, ensemble, table, setup_info, train_table):
    """Per-sample contributions of a stored model on new data.

    ``train_table`` provides the control strata for normalization.
    """
    summaries = {key: ReferenceSummary.from_dict(p.summaries[setup_info["norm"]])
                 for key, p in model.partitions.items()}
    setup = DetectionSetup(setup_info["score"], setup_info["norm"], setup_info["features"],
                           summaries)
    _, scored = setup.transform(train_table.filter(lambda r: not r.excluded), table)
    rows = []
    for sid, e in zip(scored.sample_ids, ensemble.explain(scored.matrix())):
        rows.append({"sample_id": sid, **e})
    return rows

