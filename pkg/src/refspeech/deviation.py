"""Stratified normalization and reference-relative deviation scores.

The univariate scores accept scalars or broadcastable arrays. Each one
measures how far a value lies from a reference band:

* ``ds_mstd``: 1 - sigma/|mu - x| beyond one standard deviation, else 0
* ``ds_mstd_nocap``: |mu - x| / sigma
* ``ds_q123``: signed distance beyond the interquartile band, in half-IQRs
* ``ds_ri``: signed distance beyond the reference interval, in half-widths

``ds_mahalanobis`` scores a whole feature vector against the reference
median and covariance.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ValidationError
from .refstats import ZeroWidthInterval, inverse_covariance, mahalanobis_distances

log = logging.getLogger(__name__)

NORM_METHODS = ("zscore", "minmax", "none")
SCORES = ("raw", "mstd", "mstd_nocap", "q123", "ri", "mahalanobis")
SUFFIX = {
    "mstd": ".dsmstd",
    "mstd_nocap": ".dsmstdnc",
    "q123": ".dsq123",
    "ri": ".dsri",
    "mahalanobis": ".dsmahal",
}
MAHALANOBIS_FEATURE = "mahalanobis" + SUFFIX["mahalanobis"]


class UnknownStratum(DataError):
    pass


class EmptyStratum(DataError):
    pass


class ZeroSigma(NumericError):
    pass


class IndeterminateScore(NumericError):
    pass


# -- normalization -----------------------------------------------------------------


def _stratum_key(gender, dataset_id):
    return f"{gender}|{dataset_id}"


@dataclass
class NormalizerStats:
    """Per-(gender, dataset) location and scale of every feature.

    ``strata`` maps "gender|dataset" to {feature: [location, scale]}: mean
    and population sd for z-scores, min and range for min-max. A feature
    whose scale is zero maps to None and passes through unchanged.
    """

    method: str
    strata: dict

    def to_dict(self):
        return {"method": self.method, "strata": self.strata}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj["method"], obj["strata"])


def fit_normalizer(train, method="zscore", features=None):
    """Fit on the control rows of ``train``, separately per (gender, dataset)."""
    if method not in NORM_METHODS:
        raise ValidationError(f"unknown normalization {method!r}")
    features = list(train.schema if features is None else features)
    strata = {}
    keys = sorted({(r.gender, r.dataset_id) for r in train.rows if not r.excluded})
    for g, ds in keys:
        ctrl = train.filter(lambda r: (r.gender, r.dataset_id) == (g, ds)
                            and r.label == "control" and not r.excluded)
        if len(ctrl) < 2:
            raise EmptyStratum(f"stratum ({g}, {ds}) has {len(ctrl)} control samples, need 2")
        if method == "none":
            strata[_stratum_key(g, ds)] = {}
            continue
        X = ctrl.matrix(features)
        params = {}
        for j, f in enumerate(features):
            col = X[:, j][~np.isnan(X[:, j])]
            if col.size == 0:
                params[f] = None
                continue
            if method == "zscore":
                loc, scale = float(col.mean()), float(col.std())
            else:
                loc, scale = float(col.min()), float(col.max() - col.min())
            if scale <= 0:
                log.warning("feature %s has zero spread in stratum (%s, %s); not scaled", f, g, ds)
                params[f] = None
            else:
                params[f] = [loc, scale]
        strata[_stratum_key(g, ds)] = params
    return NormalizerStats(method, strata)


def apply_normalizer(stats, table):
    if stats.method == "none":
        return table
    schema = table.schema
    X = table.matrix(schema)
    for i, row in enumerate(table.rows):
        key = _stratum_key(row.gender, row.dataset_id)
        if key not in stats.strata:
            raise UnknownStratum(f"{row.sample_id}: stratum ({row.gender}, {row.dataset_id}) "
                                 "was not seen when fitting")
        params = stats.strata[key]
        for j, f in enumerate(schema):
            p = params.get(f)
            if p is not None:
                X[i, j] = (X[i, j] - p[0]) / p[1]
    return table.with_matrix(schema, X)


# -- univariate scores ---------------------------------------------------------------


def _arr(*xs):
    return [np.asarray(x, dtype=float) for x in xs]


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def ds_mstd(x, mu, sigma):
    x, mu, sigma = _arr(x, mu, sigma)
    if np.any(sigma <= 0):
        raise ZeroSigma("reference standard deviation must be positive")
    gap = np.abs(mu - x)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(gap > sigma, 1.0 - sigma / gap, 0.0)
    return _out(score)


def ds_mstd_nocap(x, mu, sigma):
    x, mu, sigma = _arr(x, mu, sigma)
    if np.any(sigma <= 0):
        raise ZeroSigma("reference standard deviation must be positive")
    return _out(np.abs(mu - x) / sigma)


def _band_score(x, lo, hi):
    width = hi - lo
    above = 2.0 * np.abs(hi - x) / width
    below = -2.0 * np.abs(lo - x) / width
    return np.where(x > hi, above, np.where(x < lo, below, 0.0))


def ds_q123(x, q1, q3):
    x, q1, q3 = _arr(x, q1, q3)
    if np.any(q3 <= q1):
        raise IndeterminateScore("first and third quartiles coincide")
    return _out(_band_score(x, q1, q3))


def ds_ri(x, lower, upper):
    x, lower, upper = _arr(x, lower, upper)
    if np.any(upper <= lower):
        raise ZeroWidthInterval("reference interval has zero width")
    return _out(_band_score(x, lower, upper))


def ds_mahalanobis(x, q2, V):
    """Distance of each row of ``x`` to the median vector under covariance V."""
    x = np.asarray(x, dtype=float)
    d = mahalanobis_distances(np.atleast_2d(x), q2, precision=inverse_covariance(V))
    return float(d[0]) if x.ndim == 1 else d


# -- reference summary ---------------------------------------------------------------


@dataclass
class ReferenceSummary:
    """Reference statistics in one normalized space.

    ``mu``, ``sigma``, ``q1``, ``q2``, ``q3``, ``ri_lb`` and ``ri_ub`` map
    feature names to values; ``covariance`` is ordered like ``features``.
    """

    features: tuple
    mu: dict
    sigma: dict
    q1: dict
    q2: dict
    q3: dict
    ri_lb: dict
    ri_ub: dict
    covariance: list

    @classmethod
    def from_table(cls, table, features=None, ris=None):
        features = tuple(table.schema if features is None else features)
        X = table.matrix(features)
        stats = {k: {} for k in ("mu", "sigma", "q1", "q2", "q3", "ri_lb", "ri_ub")}
        for j, f in enumerate(features):
            col = X[:, j][~np.isnan(X[:, j])]
            if col.size < 2:
                raise DataError(f"feature {f!r} has fewer than 2 reference values")
            q1, q2, q3 = np.percentile(col, (25, 50, 75))
            lb, ub = (ris[f].lower, ris[f].upper) if ris else np.percentile(col, (2.5, 97.5))
            for k, v in zip(stats, (col.mean(), col.std(ddof=1), q1, q2, q3, lb, ub)):
                stats[k][f] = float(v)
        complete = X[~np.isnan(X).any(axis=1)]
        if complete.shape[0] > len(features):
            cov = np.cov(complete, rowvar=False).reshape(len(features), len(features))
        else:
            cov = np.diag([stats["sigma"][f] ** 2 for f in features])
        return cls(features, covariance=cov.tolist(), **stats)

    def vector(self, name, features=None):
        d = getattr(self, name)
        return np.array([d[f] for f in (features or self.features)])

    def covariance_of(self, features):
        idx = [self.features.index(f) for f in features]
        return np.asarray(self.covariance)[np.ix_(idx, idx)]

    def to_dict(self):
        return {k: (list(v) if k == "features" else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, obj):
        return cls(**{**obj, "features": tuple(obj["features"])})


def _score_columns(score, X, summary, features):
    """Score matrix and the names of the features that could be scored."""
    if score == "mahalanobis":
        out = np.full((X.shape[0], 1), np.nan)
        ok = ~np.isnan(X).any(axis=1)
        if ok.any():
            out[ok, 0] = ds_mahalanobis(X[ok], summary.vector("q2", features),
                                        summary.covariance_of(features))
        return out, [MAHALANOBIS_FEATURE]
    fn = {
        "mstd": lambda x, f: ds_mstd(x, summary.mu[f], summary.sigma[f]),
        "mstd_nocap": lambda x, f: ds_mstd_nocap(x, summary.mu[f], summary.sigma[f]),
        "q123": lambda x, f: ds_q123(x, summary.q1[f], summary.q3[f]),
        "ri": lambda x, f: ds_ri(x, summary.ri_lb[f], summary.ri_ub[f]),
    }[score]
    cols, names = [], []
    for j, f in enumerate(features):
        try:
            with np.errstate(invalid="ignore"):
                col = np.asarray(fn(X[:, j], f), dtype=float)
        except (IndeterminateScore, ZeroWidthInterval, ZeroSigma) as exc:
            log.warning("feature %s dropped from %s scores: %s", f, score, exc)
            continue
        col[np.isnan(X[:, j])] = np.nan
        cols.append(col)
        names.append(f + SUFFIX[score])
    return (np.column_stack(cols) if cols else np.empty((X.shape[0], 0))), names


def deviation_table(table, summaries, score, features=None):
    """Replace features by deviation scores against the matching reference summary.

    ``summaries`` maps (gender, task) to a ReferenceSummary, or is a single
    summary used for every row. ``score="raw"`` returns the selected
    features unchanged.
    """
    if score not in SCORES:
        raise ValidationError(f"unknown deviation score {score!r}")
    features = list(table.schema if features is None else features)
    if score == "raw":
        return table.select_features(features)
    if isinstance(summaries, ReferenceSummary):
        summaries = {None: summaries}
    X = table.matrix(features)
    groups = {}
    for i, row in enumerate(table.rows):
        key = (row.gender, row.task) if (row.gender, row.task) in summaries else None
        if key not in summaries:
            raise DataError(f"{row.sample_id}: no reference summary for ({row.gender}, {row.task})")
        groups.setdefault(key, []).append(i)
    # a feature dropped in any partition is dropped everywhere so rows share a schema
    parts = {}
    for key, idx in groups.items():
        parts[key] = _score_columns(score, X[idx], summaries[key], features)
    names = None
    for _, part_names in parts.values():
        names = part_names if names is None else [n for n in names if n in part_names]
    names = names or []
    out = np.full((X.shape[0], len(names)), np.nan)
    for key, idx in groups.items():
        vals, part_names = parts[key]
        cols = [part_names.index(n) for n in names]
        out[idx] = vals[:, cols]
    return table.with_matrix(names, out)
