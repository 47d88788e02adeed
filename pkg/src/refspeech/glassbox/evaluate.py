"""Speaker-disjoint cross-validation with majority voting and macro metrics."""

import io
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from ..errors import ValidationError
from .logreg import logreg_train
from .nam import NamConfig, NamEnsemble, export_shapes, nam_train

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")
CONTROL, PATIENT = 0, 1


class FoldPlanMismatch(ValidationError):
    pass


def classification_metrics(y_true, y_pred):
    """Accuracy and macro precision/recall/F1 over both classes, in percent."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    p, r, f, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=[CONTROL, PATIENT], average="macro", zero_division=0)
    return {"accuracy": 100.0 * accuracy_score(y_true, y_pred),
            "precision": 100.0 * p, "recall": 100.0 * r, "f1": 100.0 * f}


def majority_vote(labels):
    """Most frequent 0/1 label; ties go to control."""
    counts = Counter(int(v) for v in labels)
    return PATIENT if counts[PATIENT] > counts[CONTROL] else CONTROL


def speaker_votes(speakers, preds, truth):
    """Per-speaker voted prediction and label, in sorted speaker order."""
    by_spk = {}
    for s, p, t in zip(speakers, preds, truth):
        by_spk.setdefault(s, ([], t))[0].append(p)
    keys = sorted(by_spk)
    return (keys, np.array([majority_vote(by_spk[k][0]) for k in keys]),
            np.array([by_spk[k][1] for k in keys]))


def metrics_csv(metrics):
    """Fixed-format table: one row per split, values in percent."""
    buf = io.StringIO()
    buf.write("split," + ",".join(METRIC_NAMES) + "\n")
    for split in sorted(metrics):
        buf.write(split + "," + ",".join(f"{metrics[split][m]:.4f}" for m in METRIC_NAMES) + "\n")
    return buf.getvalue()


@dataclass
class CVResult:
    metrics: dict
    predictions: list
    explanations: dict
    importance: dict
    ranking: list
    models: list = field(default_factory=list)
    shapes: list = field(default_factory=list)


def _explain(model, X, ids):
    contrib = model.contributions(X)
    probs = model.predict_proba(X)
    intercept = model.intercept
    return {sid: {"intercept": float(intercept), "logit": float(intercept + c.sum()),
                  "probability": float(p), "contributions": c}
            for sid, c, p in zip(ids, contrib, probs)}


def _importance(model, X):
    c = model.contributions(X)
    c = c - c.mean(axis=0)
    return np.mean(np.abs(c), axis=0)


def _fit(kind, config, train, dev, l2):
    X, y = train.matrix(), train.binary_labels()
    if kind == "nam":
        return nam_train(X, y, config, dev=(dev.matrix(), dev.binary_labels()) if dev else None,
                         feature_names=train.schema)
    if kind == "logreg":
        return logreg_train(X, y, l2=l2, feature_names=train.schema)
    raise ValidationError(f"unknown model {kind!r}")


def _check_plan(table, folds):
    try:
        idx = folds.sample_folds(table)
    except ValidationError as exc:
        raise FoldPlanMismatch(str(exc)) from None
    if idx.size and (idx.min() < 0 or idx.max() >= folds.n_folds):
        raise FoldPlanMismatch("fold index outside the plan")
    return idx


def _split(table, mask):
    return table.filter(lambda r, ids=set(np.asarray(table.sample_ids)[mask]): r.sample_id in ids)


def _report(metrics, name, table, pred_by_id):
    """Sample- and speaker-level metrics; excluded rows are predicted control."""
    ids = table.sample_ids
    truth = table.binary_labels()
    preds = np.array([pred_by_id.get(s, CONTROL) for s in ids])
    metrics[name] = classification_metrics(truth, preds)
    _, vp, vt = speaker_votes([r.speaker_id for r in table.rows], preds, truth)
    metrics[name + "_speaker_mv"] = classification_metrics(vt, vp)


def cross_validate(table, folds, config=None, model="nam", transform=None, test_table=None,
                   l2=1e-3, keep_models=False, with_shapes=False):
    """Train one model per fold and report dev/test metrics.

    ``cv_with_dev_fold``: fold f is the test fold, fold f+1 the dev fold
    (early stopping) and the rest train. ``cv_for_tuning_plus_heldout_test``:
    fold f is the dev fold, and the fold models vote on ``test_table``.
    ``transform(train, *others)`` returns the transformed tables; it runs
    per fold so normalization only sees training-fold data.
    """
    config = config or NamConfig()
    mode = folds.mode
    if mode == "cv_for_tuning_plus_heldout_test" and test_table is None:
        raise ValidationError("held-out test mode needs a test table")
    fold_idx = _check_plan(table, folds)
    usable = np.array([not r.excluded for r in table.rows])
    transform = transform or (lambda *tables: list(tables))
    n = folds.n_folds
    dev_pred, test_pred, test_votes = {}, {}, {}
    predictions, explanations, fold_expl = [], {}, []
    importances, models, shapes = [], [], []
    names = None
    if test_table is not None:
        test_usable = test_table.filter(lambda r: not r.excluded)

    for f in range(n):
        if mode == "cv_with_dev_fold":
            test_mask = (fold_idx == f) & usable
            dev_mask = (fold_idx == (f + 1) % n) & usable
            train_mask = usable & ~test_mask & ~dev_mask
            test_part = _split(table, test_mask)
        else:
            dev_mask = (fold_idx == f) & usable
            train_mask = usable & ~dev_mask
            test_part = test_usable
        train, dev, test = transform(_split(table, train_mask), _split(table, dev_mask), test_part)
        names = train.schema
        fitted = _fit(model, config, train, dev if model == "nam" else None, l2)
        importances.append(_importance(fitted, train.matrix()))
        if keep_models:
            models.append(fitted)
        if with_shapes and isinstance(fitted, NamEnsemble):
            shapes.append(export_shapes(fitted, train)[0])
        dp = fitted.predict_proba(dev.matrix())
        for sid, p in zip(dev.sample_ids, dp):
            dev_pred[sid] = int(p >= 0.5)
            predictions.append({"sample_id": sid, "split": "dev", "fold": f, "probability": float(p)})
        if len(test):
            tp = fitted.predict_proba(test.matrix())
            expl = _explain(fitted, test.matrix(), test.sample_ids)
            for sid, p in zip(test.sample_ids, tp):
                predictions.append({"sample_id": sid, "split": "test", "fold": f,
                                    "probability": float(p)})
                if mode == "cv_with_dev_fold":
                    test_pred[sid] = int(p >= 0.5)
                else:
                    test_votes.setdefault(sid, []).append(int(p >= 0.5))
            if mode == "cv_with_dev_fold":
                explanations.update(expl)
            else:
                fold_expl.append(expl)

    if mode != "cv_with_dev_fold":
        test_pred = {sid: majority_vote(v) for sid, v in test_votes.items()}
        for sid in fold_expl[0] if fold_expl else []:
            parts = [e[sid] for e in fold_expl]
            explanations[sid] = {
                k: (np.mean([p[k] for p in parts], axis=0) if k == "contributions"
                    else float(np.mean([p[k] for p in parts])))
                for k in ("intercept", "logit", "probability", "contributions")}
            explanations[sid]["logit"] = float(explanations[sid]["intercept"]
                                               + explanations[sid]["contributions"].sum())

    metrics = {}
    _report(metrics, "dev", table, dev_pred)
    _report(metrics, "test", table if mode == "cv_with_dev_fold" else test_table, test_pred)
    for e in explanations.values():
        e["contributions"] = dict(zip(names, map(float, e["contributions"])))
    imp = np.mean(importances, axis=0)
    importance = dict(zip(names, map(float, imp)))
    ranking = sorted(importance, key=lambda k: (-importance[k], k))
    return CVResult(metrics, predictions, explanations, importance, ranking, models, shapes)
