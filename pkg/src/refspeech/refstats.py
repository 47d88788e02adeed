"""Reference-population statistics.

Outlier screening by Mahalanobis distance, non-parametric reference
intervals with bootstrap confidence bands, rank-sum tests for partition
decisions, correlation clustering with prototype selection, and the
distance of samples to the reference intervals.
"""

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from scipy.stats import norm, rankdata

from .corpus import CONTENT_FEATURES
from .errors import DataError, NumericError, ValidationError
from .rng import seed_sequence

log = logging.getLogger(__name__)

RI_LEVELS = (2.5, 97.5)
CI_LEVELS = (5.0, 95.0)
N_BOOTSTRAP = 1000
MIN_RI_VALUES = 20
RECOMMENDED_RI_VALUES = 120
OUTLIER_SIGMAS = 3.0
CT_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


class SingularCovariance(NumericError):
    pass


class InsufficientSamples(DataError):
    pass


class TooFewValues(DataError):
    pass


class MissingFeature(ValidationError):
    pass


class ZeroWidthInterval(NumericError):
    pass


class ConstantFeature(UserWarning):
    """A feature with zero variance; its correlations are undefined."""


class SmallReferenceSample(UserWarning):
    pass


# -- covariance and distances ---------------------------------------------------


def inverse_covariance(cov):
    """Inverse of ``cov``, adding a 1e-8 * trace/d ridge if it is singular."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    try:
        np.linalg.cholesky(cov)
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-8 * np.trace(cov) / d
    if not ridge > 0:
        raise SingularCovariance("covariance has zero trace")
    reg = cov + ridge * np.eye(d)
    try:
        np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite even with ridge") from None
    log.warning("singular covariance, added ridge %.3g", ridge)
    return np.linalg.inv(reg)


def mahalanobis_distances(X, centre, cov=None, precision=None):
    """Row-wise sqrt((x - centre) P (x - centre)^T)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if precision is None:
        precision = inverse_covariance(cov)
    D = X - np.asarray(centre, dtype=float)
    q = np.einsum("ij,jk,ik->i", D, precision, D)
    return np.sqrt(np.maximum(q, 0.0))


@dataclass
class OutlierReport:
    distances: dict
    cutoff: float
    excluded: frozenset

    def to_dict(self):
        return {"distances": self.distances, "cutoff": self.cutoff,
                "excluded": sorted(self.excluded)}


def outlier_cutoff(distances, n_sigmas=OUTLIER_SIGMAS):
    d = np.asarray(distances, dtype=float)
    return float(d.mean() + n_sigmas * d.std())


def mahalanobis_outliers(table, feature_subset=None, n_sigmas=OUTLIER_SIGMAS):
    """Flag samples whose distance to the mean exceeds mean + 3 sd of all distances.

    Content features are left out of the default subset. Rows missing any
    of the features are not scored. Call once per task.
    """
    if feature_subset is None:
        feature_subset = [f for f in table.schema if f not in CONTENT_FEATURES]
    feature_subset = list(feature_subset)
    mask = table.complete_rows(feature_subset)
    X = table.matrix(feature_subset)[mask]
    ids = [sid for sid, m in zip(table.sample_ids, mask) if m]
    d = len(feature_subset)
    if X.shape[0] < d + 2:
        raise InsufficientSamples(f"{X.shape[0]} complete samples for {d} features, need {d + 2}")
    cov = np.cov(X, rowvar=False).reshape(d, d)
    dist = mahalanobis_distances(X, X.mean(axis=0), cov)
    cutoff = outlier_cutoff(dist, n_sigmas)
    distances = {sid: float(v) for sid, v in zip(ids, dist)}
    excluded = frozenset(sid for sid, v in distances.items() if v > cutoff)
    return OutlierReport(distances, cutoff, excluded)


# -- reference intervals ----------------------------------------------------------


@dataclass
class ReferenceInterval:
    feature: str
    partition: tuple | None
    lower: float
    upper: float
    ci_lower: tuple
    ci_upper: tuple
    n: int

    def contains(self, x):
        return self.lower <= x <= self.upper

    def to_dict(self):
        out = asdict(self)
        out["partition"] = list(self.partition) if self.partition else None
        out["ci_lower"], out["ci_upper"] = list(self.ci_lower), list(self.ci_upper)
        return out

    @classmethod
    def from_dict(cls, obj):
        part = obj.get("partition")
        return cls(obj["feature"], tuple(part) if part else None, float(obj["lower"]),
                   float(obj["upper"]), tuple(obj["ci_lower"]), tuple(obj["ci_upper"]),
                   int(obj["n"]))


def bootstrap_limits(values, n_boot=N_BOOTSTRAP, seed=0, levels=RI_LEVELS):
    """(n_boot, len(levels)) percentile limits of resampled ``values``.

    Resample ``b`` draws from its own stream spawned from ``seed``, so the
    result does not depend on how the resamples are scheduled.
    """
    x = np.asarray(values, dtype=float)
    children = seed_sequence(seed, "bootstrap").spawn(n_boot)
    idx = np.stack([np.random.default_rng(c).integers(0, x.size, x.size) for c in children])
    return np.percentile(x[idx], levels, axis=1).T


def estimate_ri(values, seed=0, n_boot=N_BOOTSTRAP, feature="", partition=None):
    """Non-parametric 2.5-97.5 percentile interval with 90% bootstrap CIs."""
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    if x.size < MIN_RI_VALUES:
        raise TooFewValues(f"{feature or 'values'}: {x.size} values, need {MIN_RI_VALUES}")
    if x.size < RECOMMENDED_RI_VALUES:
        warnings.warn(f"{feature or 'values'}: only {x.size} reference values "
                      f"(recommended {RECOMMENDED_RI_VALUES})", SmallReferenceSample, stacklevel=2)
    lower, upper = np.percentile(x, RI_LEVELS)
    boot = bootstrap_limits(x, n_boot, seed)
    ci_lo = np.percentile(boot[:, 0], CI_LEVELS)
    ci_hi = np.percentile(boot[:, 1], CI_LEVELS)
    # the point estimate can fall outside a percentile band on tiny samples
    ci_lo = (min(ci_lo[0], lower), max(ci_lo[1], lower))
    ci_hi = (min(ci_hi[0], upper), max(ci_hi[1], upper))
    return ReferenceInterval(feature, partition, float(lower), float(upper),
                             tuple(map(float, ci_lo)), tuple(map(float, ci_hi)), int(x.size))


# -- rank-sum test ---------------------------------------------------------------


def mann_whitney_u(a, b):
    """U statistic of ``a`` and its two-sided p-value.

    Normal approximation with tie-corrected variance and a 0.5 continuity
    correction; p = 1 when all values are tied.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or b.size < 3:
        raise TooFewValues("each group needs at least 3 values")
    n1, n2 = a.size, b.size
    n = n1 + n2
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie = (counts ** 3 - counts).sum()
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return {"U": float(u), "p_two_sided": 1.0}
    z = max(abs(u - n1 * n2 / 2.0) - 0.5, 0.0) / np.sqrt(var)
    return {"U": float(u), "p_two_sided": float(min(1.0, 2.0 * norm.sf(z)))}


def partition_tests(table, features, alpha=0.05):
    """Per task and feature, whether F and M differ at level ``alpha``."""
    out = {}
    for task in sorted({r.task for r in table.rows}):
        sub = table.filter(lambda r, t=task: r.task == t)
        g = np.array([r.gender for r in sub.rows])
        for f in features:
            col = sub.column(f)
            a, b = col[(g == "F") & ~np.isnan(col)], col[(g == "M") & ~np.isnan(col)]
            if a.size < 3 or b.size < 3:
                continue
            res = mann_whitney_u(a, b)
            res["split"] = res["p_two_sided"] < alpha
            out[(task, f)] = res
    return out


# -- clustering ------------------------------------------------------------------


@dataclass
class ClusterModel:
    correlation_threshold: float
    clusters: tuple
    prototypes: tuple | None = None

    def to_dict(self):
        return {"CT": self.correlation_threshold,
                "clusters": [list(c) for c in self.clusters],
                "prototypes": list(self.prototypes) if self.prototypes is not None else None}

    @classmethod
    def from_dict(cls, obj):
        protos = obj.get("prototypes")
        return cls(float(obj["CT"]), tuple(tuple(c) for c in obj["clusters"]),
                   tuple(protos) if protos is not None else None)


def correlation_distance(X, signed=False):
    """1 - |r| (or 1 - r when ``signed``) between the columns of ``X``."""
    r = np.corrcoef(X, rowvar=False)
    d = 1.0 - (r if signed else np.abs(r))
    d = np.clip((d + d.T) / 2.0, 0.0, 2.0)
    np.fill_diagonal(d, 0.0)
    return d


def cluster_features(table, CT, features=None, method="average", signed=False):
    """Agglomerative clustering of features, cut at height 1 - CT."""
    features = list(table.schema if features is None else features)
    if len(features) < 2:
        raise InsufficientSamples("clustering needs at least 2 features")
    X = table.matrix(features)
    X = X[~np.isnan(X).any(axis=1)]
    if X.shape[0] < 10:
        raise InsufficientSamples(f"{X.shape[0]} complete samples, need 10")
    if CT >= 1.0:
        return ClusterModel(float(CT), tuple((f,) for f in features))

    const = np.ptp(X, axis=0) == 0
    for f in np.asarray(features)[const]:
        warnings.warn(f"feature {f!r} is constant; kept as its own cluster", ConstantFeature,
                      stacklevel=2)
    varying = [f for f, c in zip(features, const) if not c]
    labels = {}
    if len(varying) >= 2:
        d = correlation_distance(X[:, ~const], signed)
        Z = linkage(squareform(d, checks=False), method=method)
        for f, c in zip(varying, fcluster(Z, t=1.0 - CT, criterion="distance")):
            labels[f] = ("c", int(c))
    elif varying:
        labels[varying[0]] = ("c", 0)
    for f in features:
        labels.setdefault(f, ("const", f))
    groups = {}
    for f in features:
        groups.setdefault(labels[f], []).append(f)
    return ClusterModel(float(CT), tuple(tuple(g) for g in groups.values()))


def _std(table, feature):
    if feature not in table.schema:
        raise MissingFeature(f"feature {feature!r} missing")
    col = table.column(feature)
    col = col[~np.isnan(col)]
    if col.size < 2:
        raise MissingFeature(f"feature {feature!r} has fewer than 2 values")
    return float(col.std(ddof=1))


def select_prototypes(clusters, ref, ctrl):
    """Per cluster, the feature whose spread differs least between the two tables."""
    protos = []
    for members in clusters.clusters:
        gaps = [(abs(_std(ref, f) - _std(ctrl, f)), f) for f in members]
        protos.append(min(gaps)[1])
    return ClusterModel(clusters.correlation_threshold, clusters.clusters, tuple(protos))


# -- distance to the reference intervals ------------------------------------------


def ri_distance(x, lower, upper):
    """Distance beyond the nearer RI limit relative to the RI width; 0 inside."""
    if lower <= x <= upper:
        return 0.0
    bound = upper if x > upper else lower
    width = upper - lower
    if width <= 0:
        return abs(x - bound)
    return abs(x - bound) / width


def _ri_lookup(ris):
    lookup = {}
    for ri in ris:
        lookup[(tuple(ri.partition) if ri.partition else None, ri.feature)] = ri
    return lookup


def ri_distance_report(table, ris):
    """Per sample: how many features fall outside their RI and the mean distance.

    An RI with a ``partition`` of (gender, task) applies only to matching
    rows; one without a partition applies to every row.
    """
    lookup = _ri_lookup(ris)
    report = {}
    for row in table.rows:
        dists = []
        for f, x in row.features.items():
            ri = lookup.get(((row.gender, row.task), f)) or lookup.get((None, f))
            if ri is not None:
                if ri.upper <= ri.lower and x != ri.lower:
                    log.warning("zero-width RI for %s; raw distance reported", f)
                dists.append(ri_distance(x, ri.lower, ri.upper))
        d = np.asarray(dists)
        report[row.sample_id] = {
            "n_outside": int((d > 0).sum()),
            "mean_distance": float(d.mean()) if d.size else 0.0,
        }
    return report


def compare_groups(report, table):
    """Rank-sum tests of controls against patients on both report columns."""
    labels = {r.sample_id: r.label for r in table.rows}
    out = {}
    for key in ("n_outside", "mean_distance"):
        ctrl = [v[key] for s, v in report.items() if labels.get(s) == "control"]
        pat = [v[key] for s, v in report.items() if labels.get(s) == "patient"]
        res = mann_whitney_u(ctrl, pat)
        res.update(control_mean=float(np.mean(ctrl)), patient_mean=float(np.mean(pat)))
        out[key] = res
    return out


# -- reference model ---------------------------------------------------------------


@dataclass
class PartitionModel:
    """Everything estimated for one (gender, task) reference partition."""

    gender: str
    task: str
    n: int
    ris: dict
    summaries: dict = field(default_factory=dict)
    clusters: dict = field(default_factory=dict)
    ri_space: str = "zscore"

    @property
    def key(self):
        return (self.gender, self.task)

    def to_dict(self):
        return {
            "gender": self.gender, "task": self.task, "n": self.n, "ri_space": self.ri_space,
            "ris": [ri.to_dict() for ri in self.ris.values()],
            "summaries": self.summaries,
            "clusters": [c.to_dict() for _, c in sorted(self.clusters.items())],
        }

    @classmethod
    def from_dict(cls, obj):
        ris = {d["feature"]: ReferenceInterval.from_dict(d) for d in obj["ris"]}
        clusters = {float(c["CT"]): ClusterModel.from_dict(c) for c in obj.get("clusters", [])}
        return cls(obj["gender"], obj["task"], int(obj["n"]), ris,
                   obj.get("summaries", {}), clusters, obj.get("ri_space", "zscore"))


@dataclass
class ReferenceModel:
    features: tuple
    partitions: dict
    normalizer: dict
    method: str
    seed: int
    outliers: dict = field(default_factory=dict)

    def partition(self, gender, task):
        try:
            return self.partitions[(gender, task)]
        except KeyError:
            raise DataError(f"reference has no partition ({gender}, {task})") from None

    def all_ris(self):
        return [ri for p in self.partitions.values() for ri in p.ris.values()]

    def to_dict(self):
        return {
            "features": list(self.features),
            "method": self.method,
            "seed": self.seed,
            "normalizer": self.normalizer,
            "outliers": {t: rep for t, rep in sorted(self.outliers.items())},
            "partitions": [p.to_dict() for _, p in sorted(self.partitions.items())],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        parts = [PartitionModel.from_dict(p) for p in obj["partitions"]]
        return cls(tuple(obj["features"]), {p.key: p for p in parts}, obj["normalizer"],
                   obj["method"], int(obj["seed"]), obj.get("outliers", {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def radar_data(partition, features=None):
    """Per-feature RI, CI and mean on a scale where the reference mean is 0
    and one reference standard deviation is 1."""
    features = list(partition.ris if features is None else features)
    stats = partition.summaries[partition.ri_space]
    out = []
    for f in features:
        ri = partition.ris[f]
        mu, sd = stats["mu"][f], stats["sigma"][f]
        sd = sd if sd > 0 else 1.0
        z = lambda v: (v - mu) / sd  # noqa: E731
        out.append({
            "feature": f, "mean": 0.0, "ri_lo": z(ri.lower), "ri_hi": z(ri.upper),
            "ci_lo": [z(v) for v in ri.ci_lower], "ci_hi": [z(v) for v in ri.ci_upper],
        })
    return out

