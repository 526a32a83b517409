"""Bayesian hyperparameter search: GP surrogate, expected improvement, trial log.

The optimiser works in the unit cube. Each dimension maps a unit coordinate
to a parameter value through a linear or log scale; integer parameters are
searched continuously and rounded when a trial is evaluated.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import DomainError, TuningError
from .gbtree import GbtParams, train

NUGGET = 1e-6
LENGTH_SCALES = (0.05, 0.1, 0.2, 0.4, 0.8)
N_CANDIDATES = 2048
N_LOCAL = 64
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    kind: str = "real"

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise DomainError(f"{self.name}: scale must be 'linear' or 'log'")
        if self.kind not in ("real", "integer"):
            raise DomainError(f"{self.name}: kind must be 'real' or 'integer'")
        if not self.lower < self.upper:
            raise DomainError(f"{self.name}: lower bound must be below upper bound")
        if self.scale == "log" and not self.lower > 0:
            raise DomainError(f"{self.name}: log scale needs a positive lower bound")

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == "log":
            lo, hi = math.log(self.lower), math.log(self.upper)
            v = math.exp(lo + u * (hi - lo))
        else:
            v = self.lower + u * (self.upper - self.lower)
        v = min(max(v, self.lower), self.upper)
        if self.kind == "integer":
            return int(math.floor(v + 0.5))
        return v

    def to_unit(self, v: float) -> float:
        if self.scale == "log":
            lo, hi = math.log(self.lower), math.log(self.upper)
            u = (math.log(v) - lo) / (hi - lo)
        else:
            u = (v - self.lower) / (self.upper - self.lower)
        return min(max(u, 0.0), 1.0)


# Search ranges of the nine tuned booster parameters. n_estimators starts at 1:
# zero trees would be a constant model.
BOOSTER_DIMENSIONS = (
    Dimension("n_estimators", 1, 2000, "linear", "integer"),
    Dimension("max_depth", 1, 10, "linear", "integer"),
    Dimension("learning_rate", 0.001, 1.0, "log"),
    Dimension("reg_alpha", 0.001, 10.0, "log"),
    Dimension("reg_lambda", 0.001, 10.0, "log"),
    Dimension("subsample", 0.001, 1.0, "linear"),
    Dimension("colsample_bytree", 0.001, 1.0, "linear"),
    Dimension("min_child_weight", 0.001, 10.0, "log"),
    Dimension("gamma", 0.001, 10.0, "log"),
)


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple = BOOSTER_DIMENSIONS

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise DomainError("search space has duplicate parameter names")
        if not names:
            raise DomainError("search space is empty")
        object.__setattr__(self, "dimensions", tuple(self.dimensions))

    @property
    def names(self):
        return tuple(d.name for d in self.dimensions)

    @property
    def ndim(self):
        return len(self.dimensions)

    def point(self, u) -> dict:
        """Parameter values for a unit-cube coordinate."""
        return {d.name: d.from_unit(x) for d, x in zip(self.dimensions, u)}

    def sample(self, n: int, rng: np.random.Generator) -> list[dict]:
        """``n`` independent uniform draws in the unit cube, mapped through the scales."""
        return [self.point(u) for u in rng.random((n, self.ndim))]

    def with_overrides(self, overrides: dict) -> "SearchSpace":
        """Replace bounds (and optionally scale) per parameter name.

        ``overrides`` maps name -> [lower, upper] or a dict with any of
        lower/upper/scale/kind.
        """
        by_name = {d.name: d for d in self.dimensions}
        for name, spec in (overrides or {}).items():
            if name not in by_name:
                raise DomainError(f"unknown search parameter {name!r}")
            if isinstance(spec, dict):
                by_name[name] = replace(by_name[name], **spec)
            else:
                lo, hi = spec
                by_name[name] = replace(by_name[name], lower=lo, upper=hi)
        return SearchSpace(tuple(by_name[d.name] for d in self.dimensions))


@dataclass(frozen=True)
class TrialRecord:
    index: int
    params: dict
    objective: float
    best_iteration: int = 0
    failed: bool = False
    unit: tuple = field(default=(), repr=False)


def expected_improvement(mu, sigma, f_best):
    """EI of a minimisation problem; vectorised over ``mu`` and ``sigma``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise DomainError("sigma must be >= 0")
    imp = f_best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = imp * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(sigma > 0, ei, np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def matern52(r):
    s = math.sqrt(5.0) * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _pairwise(A, B):
    d2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(d2, 0.0))


class GaussianProcess:
    """Zero-mean GP with an isotropic Matern 5/2 kernel and unit prior variance."""

    def __init__(self, X, y, length_scale: float, nugget: float = NUGGET):
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        self.length_scale = float(length_scale)
        self.nugget = nugget
        K = matern52(_pairwise(self.X, self.X) / self.length_scale)
        K[np.diag_indices_from(K)] += nugget
        try:
            self.L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("kernel matrix is not positive definite despite the nugget") from None
        self.alpha = cho_solve((self.L, True), self.y)

    def log_marginal_likelihood(self) -> float:
        n = len(self.y)
        return float(-0.5 * self.y @ self.alpha - np.sum(np.log(np.diag(self.L))) - 0.5 * n * math.log(2 * math.pi))

    def predict(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        Ks = matern52(_pairwise(Q, self.X) / self.length_scale)
        mu = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = np.maximum(1.0 - np.sum(v * v, 0), 0.0)
        return mu, np.sqrt(var)


def fit_gp(X, y, length_scale=None) -> GaussianProcess:
    """Fit on standardised targets; pick the length scale by marginal likelihood if not given."""
    if length_scale is not None:
        return GaussianProcess(X, y, length_scale)
    best = None
    for ls in LENGTH_SCALES:
        gp = GaussianProcess(X, y, ls)
        if best is None or gp.log_marginal_likelihood() > best.log_marginal_likelihood():
            best = gp
    return best


def standardize(y):
    y = np.asarray(y, dtype=np.float64)
    sd = float(np.std(y))
    return (y - float(np.mean(y))) / (sd if sd > 0 else 1.0)


def gp_posterior(X, y, query, length_scale=None):
    """Posterior (mu, sigma) at ``query`` given unit-cube points ``X`` and standardised ``y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) < 2:
        raise DomainError("the surrogate needs at least two history points")
    gp = fit_gp(X, y, length_scale)
    mu, sd = gp.predict(np.atleast_2d(query))
    if np.ndim(query) == 1:
        return float(mu[0]), float(sd[0])
    return mu, sd


def _sobol(d, n, seed):
    m = max(0, math.ceil(math.log2(max(n, 1))))
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = qmc.Sobol(d, scramble=True, seed=rng).random_base2(m)
    return pts[:n]


def _propose(Xu, y_std, d, ss):
    """Next unit-cube point: argmax EI over quasi-random and local candidates."""
    gp = fit_gp(Xu, y_std)
    cand = _sobol(d, N_CANDIDATES, ss.spawn(1)[0])
    rng = np.random.Generator(np.random.PCG64(ss.spawn(1)[0]))
    order = np.argsort(y_std, kind="stable")
    centers = Xu[order[: min(len(order), 8)]]
    pick = np.arange(N_LOCAL) % len(centers)
    local = np.clip(centers[pick] + rng.normal(0.0, 0.05, size=(N_LOCAL, d)), 0.0, 1.0)
    cand = np.vstack([cand, local])
    mu, sd = gp.predict(cand)
    ei = expected_improvement(mu, sd, float(np.min(y_std)))
    return cand[int(np.argmax(ei))]


def _evaluate(objective, values):
    out = objective(values)
    if isinstance(out, tuple):
        value, best_it = out[0], int(out[1])
    else:
        value, best_it = out, 0
    return float(value), best_it


def tune(space: SearchSpace, objective, budget: int = 50, n_init: int = 10, seed: int = 0, callback=None):
    """Minimise ``objective(values) -> float | (float, best_iteration)``.

    The first ``n_init`` trials are scrambled-Sobol points; every later trial
    maximises expected improvement under a GP fitted to the successful trials.
    A trial whose evaluation raises or returns a non-finite value is recorded
    as failed (objective nan) and left out of the surrogate.

    Returns ``(best_values, history)``.
    """
    budget, n_init = int(budget), int(n_init)
    if not budget >= n_init >= 2:
        raise DomainError(f"need budget >= n_init >= 2, got budget={budget}, n_init={n_init}")
    d = space.ndim
    root = np.random.SeedSequence(int(seed))
    init_ss, loop_ss = root.spawn(2)
    init_pts = _sobol(d, n_init, init_ss)
    history: list[TrialRecord] = []

    for i in range(budget):
        ok = [t for t in history if not t.failed]
        if i < n_init:
            u = init_pts[i]
        elif len(ok) < 2:
            u = _sobol(d, 1, loop_ss.spawn(1)[0])[0]
        else:
            Xu = np.array([t.unit for t in ok])
            y = standardize([t.objective for t in ok])
            u = _propose(Xu, y, d, loop_ss.spawn(1)[0])
        values = space.point(u)
        try:
            value, best_it = _evaluate(objective, values)
            failed = not math.isfinite(value)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError):
            value, best_it, failed = math.nan, 0, True
        if failed:
            value = math.nan
        rec = TrialRecord(i, values, value, best_it, failed, tuple(float(x) for x in u))
        history.append(rec)
        if callback is not None:
            callback(rec)

    ok = [t for t in history if not t.failed]
    if not ok:
        raise TuningError("every tuning trial failed")
    best = min(ok, key=lambda t: (t.objective, t.index))
    return dict(best.params), history


def incumbent_trace(history) -> list[float]:
    """Best objective seen after each trial (nan until the first success)."""
    out, cur = [], math.inf
    for t in history:
        if not t.failed and t.objective < cur:
            cur = t.objective
        out.append(cur if math.isfinite(cur) else math.nan)
    return out


class BoosterObjective:
    """Validation RMSE at the best iteration of a booster trained with the trial's parameters.

    Keeps the model of the best trial so far in ``best_model``.
    """

    def __init__(self, train_table, val_table, base: GbtParams = GbtParams(), early_stopping_rounds: int = 10):
        self.train_table = train_table
        self.val_table = val_table
        self.base = base.replace(early_stopping_rounds=early_stopping_rounds)
        self.best_model = None
        self.best_value = math.inf
        self.best_trace = None

    def params_for(self, values: dict) -> GbtParams:
        return self.base.replace(**values)

    def __call__(self, values: dict):
        model, trace = train(self.train_table, self.val_table, self.params_for(values))
        value = trace.val_rmse[model.best_iteration - 1]
        if value < self.best_value:
            self.best_value = value
            self.best_model = model
            self.best_trace = trace
        return value, model.best_iteration


def tune_booster(train_table, val_table, space: SearchSpace = SearchSpace(), budget=50, n_init=10, seed=0, base=GbtParams(), callback=None):
    """Tune booster parameters; returns ``(best GbtParams, history, best model, best trace)``."""
    obj = BoosterObjective(train_table, val_table, base)
    values, history = tune(space, obj, budget, n_init, seed, callback)
    return obj.params_for(values), history, obj.best_model, obj.best_trace


def export_history(history, path, names=None) -> None:
    if names is None:
        names = list(history[0].params) if history else []
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial"] + list(names) + ["objective", "best_iteration", "failed"])
        for t in history:
            vals = [repr(t.params[n]) if isinstance(t.params[n], float) else t.params[n] for n in names]
            obj = "nan" if t.failed else repr(t.objective)
            w.writerow([t.index] + vals + [obj, t.best_iteration, int(t.failed)])
    os.replace(tmp, path)


def read_history(path) -> list[TrialRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = header[1:-3]
    out = []
    for r in body:
        params = {}
        for n, v in zip(names, r[1 : 1 + len(names)]):
            params[n] = float(v) if any(ch in v for ch in ".en") else int(v)
        out.append(TrialRecord(int(r[0]), params, float(r[-3]), int(r[-2]), bool(int(r[-1]))))
    return out


def save_params(params: GbtParams, path) -> None:
    """Write a params file the train command accepts (``params_file``)."""
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump({"params": params.to_dict()}, fh, sort_keys=True)
    os.replace(tmp, path)


def load_params(path) -> GbtParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return GbtParams.from_dict(doc.get("params", doc))
