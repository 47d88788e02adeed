"""Neural additive model: one small network per feature, summed into a logit.

All feature subnetworks of a model are stored stacked along a leading
feature axis, so a forward pass is a handful of batched matrix products.
Gradients are derived by hand; ``objective_and_gradient`` exposes them for
checking against finite differences.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import NumericError, ValidationError
from ..rng import derive_rng, derive_seed

log = logging.getLogger(__name__)

ARCHS = {
    "one_layer_1024": (1024,),
    "one_layer_512": (512,),
    "three_layer_64_64_32": (64, 64, 32),
}
ACTIVATIONS = ("relu", "exu")
MAGIC = "refspeech-nam"
FORMAT_VERSION = 1


class DimensionMismatch(ValidationError):
    pass


class NonBinaryLabels(ValidationError):
    pass


class DivergedLoss(NumericError):
    pass


@dataclass(frozen=True)
class NamConfig:
    subnet_arch: str = "one_layer_1024"
    activation: str = "exu"
    learning_rate: float = 0.01
    dropout_p: float = 0.0
    feature_dropout_p: float = 0.0
    weight_decay: float = 1e-6
    output_penalty: float = 0.001
    batch_size: int = 64
    epochs: int = 1000
    patience: int = 50
    ensemble_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.subnet_arch not in ARCHS:
            raise ValidationError(f"unknown subnet architecture {self.subnet_arch!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError("dropout_p must lie in [0, 1)")
        if not 0.0 <= self.feature_dropout_p <= 1.0:
            raise ValidationError("feature_dropout_p must lie in [0, 1]")
        if self.output_penalty < 0 or self.weight_decay < 0:
            raise ValidationError("penalties must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.ensemble_size < 1:
            raise ValidationError("learning_rate, batch_size and ensemble_size must be positive")

    @property
    def hidden(self):
        return ARCHS[self.subnet_arch]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


# -- parameters ---------------------------------------------------------------------


def param_names(n_layers):
    names = ["w0", "b0"]
    for layer in range(1, n_layers):
        names += [f"w{layer}", f"b{layer}"]
    return names + ["wo", "bo", "beta"]


def init_params(X, config, rng):
    """Initial parameters for ``X.shape[1]`` feature subnetworks.

    First-layer units are anchored at observed data values: ReLU kinks sit
    at sampled training values, and ExU centres are sampled training values
    with log-slopes drawn from N(4, 0.5).
    """
    n, K = X.shape
    hidden = config.hidden
    h1 = hidden[0]
    anchors = X[rng.integers(0, n, size=(h1, K)), np.arange(K)].T
    p = {}
    if config.activation == "exu":
        p["w0"] = rng.normal(4.0, 0.5, size=(K, h1))
        p["b0"] = anchors
    else:
        p["w0"] = rng.standard_normal((K, h1))
        p["b0"] = -p["w0"] * anchors
    for layer in range(1, len(hidden)):
        fan_in = hidden[layer - 1]
        p[f"w{layer}"] = rng.standard_normal((K, fan_in, hidden[layer])) * np.sqrt(2.0 / fan_in)
        p[f"b{layer}"] = np.zeros((K, hidden[layer]))
    p["wo"] = rng.standard_normal((K, hidden[-1])) / np.sqrt(hidden[-1])
    p["bo"] = np.zeros(K)
    p["beta"] = np.zeros(())
    return p


def _first_layer(x, p, activation):
    """(K, B, h1) pre-activations from the (B, K) input."""
    xk = x.T[:, :, None]
    if activation == "exu":
        return (xk - p["b0"][:, None, :]) * np.exp(p["w0"])[:, None, :]
    return xk * p["w0"][:, None, :] + p["b0"][:, None, :]


def _act(z, activation, first):
    if first and activation == "exu":
        return np.clip(z, 0.0, 1.0)
    return np.maximum(z, 0.0)


def _act_grad(z, activation, first):
    if first and activation == "exu":
        return ((z > 0.0) & (z < 1.0)).astype(float)
    return (z > 0.0).astype(float)


def feature_outputs(p, x, activation, n_layers, masks=None, keep=None):
    """Per-feature outputs f (K, B) plus the cache needed for backprop.

    ``masks`` are inverted-dropout multipliers per hidden layer, ``keep`` is
    the per-feature 0/1 feature-dropout mask.
    """
    zs, hs = [], []
    z = _first_layer(x, p, activation)
    for layer in range(n_layers):
        if layer > 0:
            z = hs[-1] @ p[f"w{layer}"] + p[f"b{layer}"][:, None, :]
        zs.append(z)
        h = _act(z, activation, layer == 0)
        if masks is not None:
            h = h * masks[layer]
        hs.append(h)
    f = np.einsum("kbh,kh->kb", hs[-1], p["wo"]) + p["bo"][:, None]
    if keep is not None:
        f = f * keep[:, None]
    return f, (zs, hs)


def _bce(logit, y):
    return np.mean(np.logaddexp(0.0, logit) - y * logit)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def objective_and_gradient(p, x, y, config, masks=None, keep=None):
    """Penalized loss on one batch and its gradient for every parameter."""
    n_layers = len(config.hidden)
    B = x.shape[0]
    f, (zs, hs) = feature_outputs(p, x, config.activation, n_layers, masks, keep)
    logit = p["beta"] + f.sum(axis=0)
    subnet = [k for k in p if k != "beta"]
    loss = (_bce(logit, y)
            + config.weight_decay * sum(np.sum(p[k] ** 2) for k in subnet)
            + config.output_penalty * np.mean(np.sum(f ** 2, axis=0)))

    g = {}
    dlogit = (_sigmoid(logit) - y) / B
    g["beta"] = np.asarray(dlogit.sum())
    df = dlogit[None, :] + 2.0 * config.output_penalty * f / B
    if keep is not None:
        df = df * keep[:, None]
    g["wo"] = np.einsum("kbh,kb->kh", hs[-1], df)
    g["bo"] = df.sum(axis=1)
    dh = df[:, :, None] * p["wo"][:, None, :]
    for layer in range(n_layers - 1, -1, -1):
        if masks is not None:
            dh = dh * masks[layer]
        dz = dh * _act_grad(zs[layer], config.activation, layer == 0)
        if layer > 0:
            g[f"w{layer}"] = np.swapaxes(hs[layer - 1], 1, 2) @ dz
            g[f"b{layer}"] = dz.sum(axis=1)
            dh = dz @ np.swapaxes(p[f"w{layer}"], 1, 2)
        elif config.activation == "exu":
            g["w0"] = np.sum(dz * zs[0], axis=1)
            g["b0"] = -dz.sum(axis=1) * np.exp(p["w0"])
        else:
            g["w0"] = np.sum(dz * x.T[:, :, None], axis=1)
            g["b0"] = dz.sum(axis=1)
    for k in subnet:
        g[k] = g[k] + 2.0 * config.weight_decay * p[k]
    return float(loss), g


# -- model ----------------------------------------------------------------------------


@dataclass
class NamModel:
    """One trained additive model.

    ``beta`` and ``params`` define the raw per-feature outputs f_k;
    ``output_means`` holds the training-set mean of each f_k. Predictions
    use centered contributions f_k - mean_k and the intercept
    beta + sum(mean_k), which leaves the logit unchanged.
    """

    config: NamConfig
    feature_names: tuple
    params: dict
    output_means: np.ndarray
    fill: np.ndarray
    history: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return len(self.feature_names)

    @property
    def beta(self):
        return float(self.params["beta"])

    @property
    def intercept(self):
        return self.beta + float(np.sum(self.output_means))

    def _prepare(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.where(np.isnan(X), self.fill, X)

    def raw_outputs(self, X):
        f, _ = feature_outputs(self.params, self._prepare(X), self.config.activation,
                               len(self.config.hidden))
        return f.T

    def contributions(self, X):
        """(n, K) centered per-feature contributions."""
        return self.raw_outputs(X) - self.output_means

    def decision_function(self, X):
        return self.intercept + self.contributions(X).sum(axis=1)

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def forward(self, x):
        """Probability and centered contributions for one feature vector."""
        c = self.contributions(np.asarray(x, dtype=float)[None, :])[0]
        return {"probability": float(_sigmoid(self.intercept + c.sum())),
                "logit": float(self.intercept + c.sum()),
                "contributions": dict(zip(self.feature_names, map(float, c)))}


@dataclass
class NamEnsemble:
    members: list

    @property
    def feature_names(self):
        return self.members[0].feature_names

    @property
    def config(self):
        return self.members[0].config

    @property
    def intercept(self):
        return float(np.mean([m.intercept for m in self.members]))

    def predict_proba(self, X):
        """Mean member probability."""
        return np.mean([m.predict_proba(X) for m in self.members], axis=0)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)

    def contributions(self, X):
        return np.mean([m.contributions(X) for m in self.members], axis=0)

    def decision_function(self, X):
        """Mean member logit, equal to intercept + summed mean contributions."""
        return self.intercept + self.contributions(X).sum(axis=1)

    def explain(self, X):
        """Per-row mean logit, mean probability and mean contributions."""
        contrib = self.contributions(X)
        probs = self.predict_proba(X)
        out = []
        for c, p in zip(contrib, probs):
            out.append({"intercept": self.intercept,
                        "logit": float(self.intercept + c.sum()),
                        "probability": float(p),
                        "contributions": dict(zip(self.feature_names, map(float, c)))})
        return out


# -- training -------------------------------------------------------------------------


def _as_matrix(data, feature_names):
    if hasattr(data, "matrix") and hasattr(data, "schema"):
        return data.matrix(), tuple(data.schema)
    X = np.atleast_2d(np.asarray(data, dtype=float))
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{k}" for k in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise DimensionMismatch("feature names do not match the data")
    return X, names


def check_binary(y):
    y = np.asarray(y)
    if y.dtype.kind in "US":
        y = (y == "patient").astype(int) if set(np.unique(y)) <= {"control", "patient"} else y
    values = set(np.unique(y).tolist())
    if not values <= {0, 1} or len(values) < 2:
        raise NonBinaryLabels(f"labels must be 0/1 with both classes present, got {sorted(values)}")
    counts = np.bincount(y.astype(int), minlength=2)
    if counts.min() < 2:
        raise NonBinaryLabels("each class needs at least 2 samples")
    return y.astype(float)


def _eval_loss(p, X, y, config):
    f, _ = feature_outputs(p, X, config.activation, len(config.hidden))
    f = f * (1.0 - config.feature_dropout_p)
    return float(_bce(p["beta"] + f.sum(axis=0), y))


def _penalized_loss(p, X, y, config):
    f, _ = feature_outputs(p, X, config.activation, len(config.hidden))
    subnet = [k for k in p if k != "beta"]
    return float(_bce(p["beta"] + f.sum(axis=0), y)
                 + config.weight_decay * sum(np.sum(p[k] ** 2) for k in subnet)
                 + config.output_penalty * np.mean(np.sum(f ** 2, axis=0)))


def _finalize(p, X, config, names, fill, history):
    """Fold feature-dropout scaling into the output layer, round to float32
    (the storage precision) and record the training-set output means."""
    p = {k: v.copy() for k, v in p.items()}
    keep = 1.0 - config.feature_dropout_p
    p["wo"] = p["wo"] * keep
    p["bo"] = p["bo"] * keep
    p = {k: v.astype(np.float32).astype(np.float64) for k, v in p.items()}
    f, _ = feature_outputs(p, X, config.activation, len(config.hidden))
    return NamModel(config, names, p, f.mean(axis=1), fill, history)


def train_member(X, y, config, seed, dev=None, names=None, fill=None, max_backoff=30):
    """Minibatch gradient descent for one model.

    An epoch that leaves the full-data penalized loss non-finite or more
    than 10x its value at the start of the epoch is undone and retried at
    half the learning rate.
    """
    rng = derive_rng(seed, "nam:train")
    K = X.shape[1]
    n_layers = len(config.hidden)
    p = init_params(X, config, rng)
    prior = np.clip(y.mean(), 1e-3, 1 - 1e-3)
    p["beta"] = np.asarray(np.log(prior / (1 - prior)))
    lr = config.learning_rate
    reference = _penalized_loss(p, X, y, config)
    best, best_loss, since_best = None, np.inf, 0
    backoffs = 0
    history = {"train_loss": [], "dev_loss": []}
    epoch = 0
    while epoch < config.epochs:
        start = {k: v.copy() for k, v in p.items()}
        order = rng.permutation(X.shape[0])
        losses = []
        for s in range(0, X.shape[0], config.batch_size):
            idx = order[s:s + config.batch_size]
            masks = None
            if config.dropout_p > 0:
                keep_p = 1.0 - config.dropout_p
                masks = [(rng.random((K, idx.size, h)) < keep_p) / keep_p for h in config.hidden]
            keep = None
            if config.feature_dropout_p > 0:
                keep = (rng.random(K) >= config.feature_dropout_p).astype(float)
            loss, g = objective_and_gradient(p, X[idx], y[idx], config, masks, keep)
            losses.append(loss)
            for k in p:
                p[k] = p[k] - lr * g[k]
        epoch_loss = float(np.mean(losses))
        finite = all(np.all(np.isfinite(v)) for v in p.values())
        end_loss = _penalized_loss(p, X, y, config) if finite else np.inf
        if not np.isfinite(end_loss) or end_loss > 10.0 * reference:
            backoffs += 1
            if backoffs > max_backoff:
                raise DivergedLoss(f"loss {end_loss} at epoch {epoch} after {max_backoff} "
                                   f"learning-rate halvings (lr={lr:.3g})")
            p = start
            lr /= 2.0
            log.info("loss diverged at epoch %d, learning rate halved to %.3g", epoch, lr)
            continue
        reference = end_loss
        history["train_loss"].append(epoch_loss)
        epoch += 1
        if dev is not None:
            dev_loss = _eval_loss(p, dev[0], dev[1], config)
            history["dev_loss"].append(dev_loss)
            if dev_loss < best_loss - 1e-12:
                best, best_loss, since_best = {k: v.copy() for k, v in p.items()}, dev_loss, 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    if best is not None:
        p = best
    history["epochs"] = epoch
    history["learning_rate"] = lr
    return _finalize(p, X, config, names, fill, history)


def nam_train(data, labels, config=None, dev=None, feature_names=None):
    """Train ``config.ensemble_size`` models differing only in their seed.

    ``dev`` is an optional (data, labels) pair used for early stopping on
    its loss; without it every model runs for ``config.epochs`` epochs.
    Missing inputs are replaced by the training mean of their feature.
    """
    config = config or NamConfig()
    X, names = _as_matrix(data, feature_names)
    y = check_binary(labels)
    if X.shape[0] != y.size:
        raise DimensionMismatch("data and labels differ in length")
    fill = np.nanmean(np.where(np.isnan(X).all(axis=0), 0.0, X), axis=0)
    fill = np.where(np.isnan(fill), 0.0, fill)
    X = np.where(np.isnan(X), fill, X)
    dev_xy = None
    if dev is not None:
        Xd, _ = _as_matrix(dev[0], names)
        dev_xy = (np.where(np.isnan(Xd), fill, Xd), np.asarray(dev[1], dtype=float))
    members = []
    for m in range(config.ensemble_size):
        seed = derive_seed(config.seed, f"nam:member:{m}")
        members.append(train_member(X, y, config, seed, dev_xy, names, fill))
    return NamEnsemble(members)


# -- shape functions ------------------------------------------------------------------


@dataclass
class ShapeFunction:
    feature: str
    grid: list
    member_curves: list
    mean_curve: list
    density: list
    bin_edges: list

    def to_dict(self):
        return asdict(self)


def export_shapes(ensemble, train, n_grid=256, n_bins=20):
    """Centered shape functions on a grid over each feature's training range,
    and features ranked by mean absolute centered contribution."""
    X, names = _as_matrix(train, ensemble.feature_names)
    if names != ensemble.feature_names:
        raise DimensionMismatch("training table features differ from the model")
    shapes, importance = [], {}
    raw_train = [m.raw_outputs(X) for m in ensemble.members]
    centres = [raw.mean(axis=0) for raw in raw_train]
    Xf = ensemble.members[0]._prepare(X)
    for k, name in enumerate(names):
        col = Xf[:, k]
        lo, hi = float(col.min()), float(col.max())
        grid = np.linspace(lo, hi, n_grid)
        curves = []
        for m, centre in zip(ensemble.members, centres):
            G = np.tile(m.fill, (n_grid, 1))
            G[:, k] = grid
            curves.append(m.raw_outputs(G)[:, k] - centre[k])
        counts, edges = np.histogram(col, bins=n_bins, range=(lo, hi) if hi > lo else (lo - 0.5, hi + 0.5))
        shapes.append(ShapeFunction(name, grid.tolist(), [c.tolist() for c in curves],
                                    np.mean(curves, axis=0).tolist(), counts.tolist(),
                                    edges.tolist()))
        importance[name] = float(np.mean([np.mean(np.abs(raw[:, k] - c[k]))
                                          for raw, c in zip(raw_train, centres)]))
    ranking = sorted(importance, key=lambda f: (-importance[f], f))
    return shapes, importance, ranking


# -- model file -----------------------------------------------------------------------


def _member_header(m, offset):
    entries = []
    for name in param_names(len(m.config.hidden)):
        arr = np.asarray(m.params[name])
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    return {"output_means": [float(v) for v in m.output_means], "params": entries}, offset


def save_ensemble(ensemble, path):
    """Little-endian uint64 header length, JSON header, float32 payload."""
    offset, members = 0, []
    for m in ensemble.members:
        head, offset = _member_header(m, offset)
        members.append(head)
    header = {
        "format": MAGIC, "version": FORMAT_VERSION,
        "config": ensemble.config.to_dict(),
        "feature_names": list(ensemble.feature_names),
        "fill": [float(v) for v in ensemble.members[0].fill],
        "members": members,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([
        np.asarray(m.params[e["name"]], dtype="<f4").ravel()
        for m, h in zip(ensemble.members, members) for e in h["params"]
    ])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())


def load_ensemble(path):
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    if header.get("format") != MAGIC:
        raise ValidationError(f"{path} is not a model file")
    config = NamConfig.from_dict(header["config"])
    names = tuple(header["feature_names"])
    fill = np.asarray(header["fill"])
    members = []
    for h in header["members"]:
        params = {}
        for e in h["params"]:
            size = int(np.prod(e["shape"])) if e["shape"] else 1
            params[e["name"]] = payload[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy()
        members.append(NamModel(config, names, params, np.asarray(h["output_means"]), fill))
    return NamEnsemble(members)


def with_seed(config, seed):
    return replace(config, seed=seed)
