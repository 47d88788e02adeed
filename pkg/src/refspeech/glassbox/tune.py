"""Hyperparameter search: random sampling or a Gaussian-process surrogate
with expected-improvement acquisition."""

import logging
import warnings

import numpy as np
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, RBF, WhiteKernel

from ..errors import ValidationError
from ..rng import derive_rng, derive_seed
from .nam import ACTIVATIONS, ARCHS

log = logging.getLogger(__name__)

STRATEGIES = ("random", "gp_ei")

# ("choice", values) or ("loguniform", low, high)
DEFAULT_SPACE = {
    "learning_rate": ("choice", (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)),
    "dropout_p": ("choice", (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)),
    "weight_decay": ("loguniform", 1e-6, 1e-4),
    "feature_dropout_p": ("choice", (0.0, 0.05, 0.1, 0.2)),
    "output_penalty": ("loguniform", 1e-3, 1e-1),
    "subnet_arch": ("choice", tuple(ARCHS)),
    "activation": ("choice", ACTIVATIONS),
}


class EmptySearchSpace(ValidationError):
    pass


def _check_space(space):
    if not space:
        raise EmptySearchSpace("search space has no dimensions")
    for name, dim in space.items():
        if dim[0] == "choice":
            if len(dim[1]) == 0:
                raise EmptySearchSpace(f"{name} has no values")
        elif dim[0] == "loguniform":
            if not 0 < dim[1] <= dim[2]:
                raise EmptySearchSpace(f"{name} needs 0 < low <= high")
        else:
            raise ValidationError(f"{name}: unknown dimension kind {dim[0]!r}")


def sample_config(space, rng):
    out = {}
    for name in sorted(space):
        dim = space[name]
        if dim[0] == "choice":
            out[name] = dim[1][int(rng.integers(len(dim[1])))]
        else:
            out[name] = float(np.exp(rng.uniform(np.log(dim[1]), np.log(dim[2]))))
    return out


def _numeric(values):
    return all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)


def encode(space, params):
    """Map a configuration to the unit cube.

    Positive numeric grids and log-uniform ranges are placed on a log scale,
    other numeric grids linearly, categorical values by their index.
    """
    out = []
    for name in sorted(space):
        dim, v = space[name], params[name]
        if dim[0] == "loguniform":
            lo, hi = np.log(dim[1]), np.log(dim[2])
            out.append(0.0 if hi == lo else (np.log(v) - lo) / (hi - lo))
            continue
        values = dim[1]
        if len(values) == 1:
            out.append(0.0)
        elif _numeric(values):
            vals = np.asarray(values, dtype=float)
            if np.all(vals > 0):
                vals, v = np.log(vals), np.log(v)
            out.append((v - vals.min()) / (vals.max() - vals.min()))
        else:
            out.append(values.index(v) / (len(values) - 1))
    return np.array(out)


def expected_improvement(mu, sigma, best, xi=0.01):
    sigma = np.maximum(sigma, 1e-12)
    z = (mu - best - xi) / sigma
    return (mu - best - xi) * norm.cdf(z) + sigma * norm.pdf(z)


def tune(objective, search_space=None, budget=100, strategy="random", seed=0,
         n_initial=5, n_candidates=1000):
    """Maximize ``objective(params)`` over ``budget`` evaluations.

    Returns the best parameters and the full (params, score) history.
    """
    space = DEFAULT_SPACE if search_space is None else search_space
    _check_space(space)
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    rng = derive_rng(seed, f"tune:{strategy}")
    history = []
    seen = set()

    def evaluate(params):
        score = float(objective(params))
        history.append((params, score))
        seen.add(tuple(sorted(params.items())))
        log.info("tune %d/%d: %s -> %.4f", len(history), budget, params, score)

    while len(history) < budget:
        if strategy == "random" or len(history) < n_initial:
            evaluate(sample_config(space, rng))
            continue
        X = np.array([encode(space, p) for p, _ in history])
        y = np.array([s for _, s in history])
        kernel = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(np.full(X.shape[1], 0.3), (1e-2, 1e2)) \
            + WhiteKernel(1e-4, (1e-8, 1e-1))
        gp = GaussianProcessRegressor(kernel, normalize_y=True,
                                      random_state=derive_seed(seed, f"tune:gp:{len(history)}"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gp.fit(X, y)
        cands = [sample_config(space, rng) for _ in range(n_candidates)]
        fresh = [c for c in cands if tuple(sorted(c.items())) not in seen] or cands
        C = np.array([encode(space, c) for c in fresh])
        mu, sd = gp.predict(C, return_std=True)
        evaluate(fresh[int(np.argmax(expected_improvement(mu, sd, y.max())))])
    best = max(range(len(history)), key=lambda i: (history[i][1], -i))
    return history[best][0], history
