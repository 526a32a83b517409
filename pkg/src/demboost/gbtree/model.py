"""Boosted-tree model: parameters, trees, prediction, importance, model files."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .. import _jit
from ..errors import DomainError, ModelFormatError
from . import _kernels as K

SCHEMA = "demboost.model/1"


@dataclass(frozen=True)
class GbtParams:
    """Booster hyperparameters. Defaults follow the XGBoost library defaults."""

    n_estimators: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    early_stopping_rounds: int = 10
    seed: int = 0
    tree_method: str = "exact"
    base_score: float | None = None

    def __post_init__(self):
        for key in ("n_estimators", "max_depth", "early_stopping_rounds", "seed"):
            v = getattr(self, key)
            if isinstance(v, float) and not v.is_integer():
                raise DomainError(f"{key} must be an integer, got {v}")
            object.__setattr__(self, key, int(v))
        for key in ("learning_rate", "reg_alpha", "reg_lambda", "gamma", "min_child_weight", "subsample", "colsample_bytree"):
            object.__setattr__(self, key, float(getattr(self, key)))
        if self.base_score is not None:
            object.__setattr__(self, "base_score", float(self.base_score))
        if self.n_estimators < 1:
            raise DomainError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise DomainError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DomainError("learning_rate must be in (0, 1]")
        for key in ("reg_alpha", "reg_lambda", "gamma", "min_child_weight"):
            if not getattr(self, key) >= 0.0:
                raise DomainError(f"{key} must be >= 0")
        for key in ("subsample", "colsample_bytree"):
            if not 0.0 < getattr(self, key) <= 1.0:
                raise DomainError(f"{key} must be in (0, 1]")
        if self.early_stopping_rounds < 0:
            raise DomainError("early_stopping_rounds must be >= 0")
        if self.tree_method not in ("exact", "hist"):
            raise DomainError(f"tree_method must be 'exact' or 'hist', got {self.tree_method!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown booster parameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def replace(self, **changes) -> "GbtParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; node 0 is the root, ``feature == -1`` marks a leaf.

    ``value`` holds the leaf weight w (unscaled by the learning rate),
    ``gain`` the accepted split gain and ``cover`` the hessian sum.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def leaf_values(self):
        return self.value[self.feature < 0]

    def split_nodes(self):
        return np.nonzero(self.feature >= 0)[0]

    def depth(self) -> int:
        def rec(nd):
            if self.feature[nd] < 0:
                return 0
            return 1 + max(rec(self.left[nd]), rec(self.right[nd]))

        return rec(0)

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        fn = K.predict_tree_nb if _jit.use_numba() else K.predict_tree_np
        return fn(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_preorder(self) -> list:
        out = []

        def rec(nd):
            if self.feature[nd] < 0:
                out.append({"leaf": float(self.value[nd]), "cover": float(self.cover[nd])})
            else:
                out.append(
                    {
                        "split": int(self.feature[nd]),
                        "threshold": float(self.threshold[nd]),
                        "gain": float(self.gain[nd]),
                        "cover": float(self.cover[nd]),
                    }
                )
                rec(self.left[nd])
                rec(self.right[nd])

        rec(0)
        return out

    @classmethod
    def from_preorder(cls, nodes: list) -> "Tree":
        feature, threshold, left, right, value, gain, cover = [], [], [], [], [], [], []
        it = iter(nodes)

        def rec():
            try:
                node = next(it)
            except StopIteration:
                raise ModelFormatError("tree serialization ends early") from None
            idx = len(feature)
            if "leaf" in node:
                w = float(node["leaf"])
                if not math.isfinite(w):
                    raise ModelFormatError("leaf weight is not finite")
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(w)
                gain.append(0.0)
                cover.append(float(node.get("cover", 0.0)))
                return idx
            feature.append(int(node["split"]))
            threshold.append(float(node["threshold"]))
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            gain.append(float(node.get("gain", 0.0)))
            cover.append(float(node.get("cover", 0.0)))
            left[idx] = rec()
            right[idx] = rec()
            return idx

        rec()
        if next(it, None) is not None:
            raise ModelFormatError("trailing nodes after tree")
        return cls(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=np.float64),
            np.array(gain, dtype=np.float64),
            np.array(cover, dtype=np.float64),
        )

    @classmethod
    def leaf(cls, w: float, cover: float = 0.0) -> "Tree":
        return cls.from_preorder([{"leaf": w, "cover": cover}])


@dataclass(frozen=True)
class TrainingTrace:
    train_rmse: tuple
    val_rmse: tuple

    def __len__(self):
        return len(self.train_rmse)


@dataclass(eq=False)
class BoostModel:
    base_score: float
    trees: list
    feature_names: tuple
    params: GbtParams
    best_iteration: int
    _packed: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        self.best_iteration = int(self.best_iteration)
        if not 0 <= self.best_iteration <= len(self.trees):
            raise DomainError(f"best_iteration {self.best_iteration} outside [0, {len(self.trees)}]")

    @property
    def active_trees(self):
        return self.trees[: self.best_iteration]

    def _pack(self):
        if self._packed is None:
            trees = self.active_trees
            width = max([t.n_nodes for t in trees], default=1)
            T = max(len(trees), 1)
            feat = np.full((T, width), -1, dtype=np.int64)
            thr = np.zeros((T, width))
            left = np.full((T, width), -1, dtype=np.int64)
            right = np.full((T, width), -1, dtype=np.int64)
            value = np.zeros((T, width))
            for k, t in enumerate(trees):
                m = t.n_nodes
                feat[k, :m] = t.feature
                thr[k, :m] = t.threshold
                left[k, :m] = t.left
                right[k, :m] = t.right
                value[k, :m] = t.value
            self._packed = (feat, thr, left, right, value, len(trees))
        return self._packed

    def predict(self, X) -> np.ndarray:
        """Batch prediction over rows of ``X`` (n, n_features)."""
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if X.shape[1] != len(self.feature_names):
            raise DomainError(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        feat, thr, left, right, value, n_trees = self._pack()
        fn = K.predict_forest_nb if _jit.use_numba() else K.predict_forest_np
        return fn(X, feat, thr, left, right, value, n_trees, float(self.params.learning_rate), float(self.base_score))

    def predict_one(self, features) -> float:
        x = np.asarray(features, dtype=np.float64).reshape(-1)
        if x.shape[0] != len(self.feature_names):
            raise DomainError(f"expected {len(self.feature_names)} features, got {x.shape[0]}")
        return float(self.predict(x[None, :])[0])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "params": self.params.to_dict(),
            "base_score": float(self.base_score),
            "feature_names": list(self.feature_names),
            "best_iteration": self.best_iteration,
            "trees": [t.to_preorder() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostModel":
        if not isinstance(d, dict) or d.get("schema") != SCHEMA:
            got = d.get("schema") if isinstance(d, dict) else None
            raise ModelFormatError(f"unsupported model schema {got!r}, expected {SCHEMA!r}")
        try:
            return cls(
                base_score=float(d["base_score"]),
                trees=[Tree.from_preorder(t) for t in d["trees"]],
                feature_names=tuple(d["feature_names"]),
                params=GbtParams.from_dict(d["params"]),
                best_iteration=int(d["best_iteration"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"malformed model document: {exc}") from None


def predict(model: BoostModel, features) -> float:
    """Predicted elevation error for one 11-value feature vector."""
    return model.predict_one(features)


def feature_importance(model: BoostModel, kind: str = "weight") -> dict:
    """Per-feature split count (``weight``) or summed split gain (``gain``)."""
    if kind not in ("weight", "gain"):
        raise DomainError(f"importance kind must be 'weight' or 'gain', got {kind!r}")
    scores = np.zeros(len(model.feature_names))
    for t in model.active_trees:
        inner = t.feature >= 0
        if kind == "weight":
            np.add.at(scores, t.feature[inner], 1.0)
        else:
            np.add.at(scores, t.feature[inner], t.gain[inner])
    if kind == "weight":
        return {name: int(s) for name, s in zip(model.feature_names, scores)}
    return {name: float(s) for name, s in zip(model.feature_names, scores)}


def save_model(model: BoostModel, path) -> None:
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_dict(), fh, indent=1, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path) -> BoostModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from None
    return BoostModel.from_dict(doc)
