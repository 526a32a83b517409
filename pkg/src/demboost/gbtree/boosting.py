"""Boosting loop for squared-error regression trees."""
from __future__ import annotations

import math

import numpy as np

from .. import _jit
from ..errors import TrainingError
from . import _kernels as K
from .model import BoostModel, GbtParams, TrainingTrace, Tree


def leaf_weight(G: float, H: float, reg_lambda: float, reg_alpha: float = 0.0) -> float:
    """Minimiser of G*w + 0.5*(H+lambda)*w^2 + alpha*|w|."""
    return -K.soft_threshold_np(np.float64(G), reg_alpha) / (H + reg_lambda)


def split_gain(GL, HL, GR, HR, reg_lambda, reg_alpha=0.0, gamma=0.0):
    """Loss reduction of splitting a node into (GL, HL) and (GR, HR)."""

    def score(G, H):
        t = K.soft_threshold_np(np.float64(G), reg_alpha)
        return t * t / (H + reg_lambda)

    return 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR)) - gamma


class _Prepared:
    """Per-training-set lookup structures shared by every tree."""

    def __init__(self, X, method):
        self.X = X
        self.method = method
        if method == "exact":
            self.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int32))
            self.xs = np.ascontiguousarray(np.take_along_axis(X, self.order.T, axis=0).T)
        else:
            self.B, self.nbins, self.cuts = K.make_bins(X)

    def start_tree(self, g):
        if self.method == "exact":
            self.gs = np.ascontiguousarray(g[self.order])
        self.g = g

    def find_splits(self, row_slot, nodeG, nodeH, feat_on, p: GbtParams):
        nb = _jit.use_numba()
        args = (row_slot, nodeG, nodeH, feat_on, p.reg_lambda, p.reg_alpha, p.gamma, p.min_child_weight)
        if self.method == "exact":
            fn = K.find_splits_exact_nb if nb else K.find_splits_exact_np
            per_feature = fn(self.xs, self.order, self.gs, *args)
        else:
            fn = K.find_splits_hist_nb if nb else K.find_splits_hist_np
            per_feature = fn(self.B, self.nbins, self.cuts, self.g, *args)
        return K.pick_splits(*per_feature)


def grow_tree(prep: _Prepared, g, h, row_on, feat_on, p: GbtParams):
    """Grow one tree level by level to ``p.max_depth``.

    Returns the tree and the final node of every row (-1 for rows left out
    by subsampling).
    """
    nb = _jit.use_numba()
    node_sums = K.node_sums_nb if nb else K.node_sums_np
    partition = K.partition_nb if nb else K.partition_np

    n = g.shape[0]
    cap = 2 ** (p.max_depth + 1) - 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    gain = np.zeros(cap)
    pos = np.where(row_on, 0, -1).astype(np.int64)

    n_nodes = 1
    G, H = node_sums(pos, g, h, 1)
    nodeG = np.zeros(cap)
    nodeH = np.zeros(cap)
    nodeG[0], nodeH[0] = G[0], H[0]
    active = np.array([0], dtype=np.int64)

    prep.start_tree(g)
    for _ in range(p.max_depth):
        slot_of_node = np.full(n_nodes + 1, -1, dtype=np.int32)
        slot_of_node[active] = np.arange(len(active), dtype=np.int32)
        row_slot = slot_of_node[pos]  # pos == -1 hits the trailing -1
        bf, bt, bg = prep.find_splits(row_slot, nodeG[active], nodeH[active], feat_on, p)
        chosen = np.nonzero(bf >= 0)[0]
        if len(chosen) == 0:
            break
        children = []
        for s in chosen:
            nd = active[s]
            feature[nd] = bf[s]
            threshold[nd] = bt[s]
            gain[nd] = bg[s]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            children += [n_nodes, n_nodes + 1]
            n_nodes += 2
        partition(prep.X, pos, feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes])
        G, H = node_sums(pos, g, h, n_nodes)
        active = np.array(children, dtype=np.int64)
        nodeG[active] = G[active]
        nodeH[active] = H[active]

    G, H = node_sums(pos, g, h, n_nodes)
    feature = feature[:n_nodes]
    leaves = feature < 0
    value = np.zeros(n_nodes)
    value[leaves] = -K.soft_threshold_np(G[leaves], p.reg_alpha) / (H[leaves] + p.reg_lambda)
    tree = Tree(
        feature,
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value,
        gain[:n_nodes].copy(),
        nodeH[:n_nodes].copy(),
    )
    return tree, pos


def _rmse(residual) -> float:
    return math.sqrt(float(np.mean(residual * residual)))


def train_arrays(X, y, params: GbtParams, X_val=None, y_val=None, *, feature_names=None, val_score=None, callback=None):
    """Fit a booster on arrays. See :func:`train`."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("training table is empty")
    if X.shape[0] != y.shape[0]:
        raise TrainingError("feature and target lengths differ")
    if not np.all(np.isfinite(y)):
        raise TrainingError("training targets must be finite")
    if not np.all(np.isfinite(X)):
        raise TrainingError("training features must be finite")
    n, F = X.shape
    if feature_names is None:
        feature_names = tuple(f"f{k}" for k in range(F))
    has_val = X_val is not None and len(X_val) > 0
    if params.early_stopping_rounds > 0 and not has_val:
        raise TrainingError("early stopping needs a non-empty validation table")
    if has_val:
        X_val = np.ascontiguousarray(X_val, dtype=np.float64)
        y_val = np.ascontiguousarray(y_val, dtype=np.float64).reshape(-1)
        if X_val.shape[1] != F:
            raise TrainingError("validation feature count differs from training")

    p = params
    base = float(np.mean(y)) if p.base_score is None else float(p.base_score)
    rng = np.random.Generator(np.random.PCG64(p.seed))
    prep = _Prepared(X, p.tree_method)
    h = np.ones(n)
    pred = np.full(n, base)
    val_pred = np.full(len(y_val), base) if has_val else None
    n_cols = max(1, int(p.colsample_bytree * F))

    trees: list[Tree] = []
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = math.inf
    best_it = 0

    for it in range(1, p.n_estimators + 1):
        g = pred - y
        if p.subsample < 1.0:
            row_on = rng.random(n) < p.subsample
            if not row_on.any():
                row_on[rng.integers(n)] = True
        else:
            row_on = np.ones(n, dtype=bool)
        if n_cols < F:
            feat_on = np.zeros(F, dtype=bool)
            feat_on[rng.choice(F, n_cols, replace=False)] = True
        else:
            feat_on = np.ones(F, dtype=bool)

        tree, leaf_of_row = grow_tree(prep, g, h, row_on, feat_on, p)
        trees.append(tree)
        if p.subsample < 1.0:
            pred += p.learning_rate * tree.predict(X)
        else:
            pred += p.learning_rate * tree.value[leaf_of_row]
        train_hist.append(_rmse(pred - y))

        if has_val:
            val_pred += p.learning_rate * tree.predict(X_val)
            v = float(val_score(it, val_pred)) if val_score is not None else _rmse(val_pred - y_val)
            val_hist.append(v)
            if v < best_val:
                best_val = v
                best_it = it
        else:
            val_hist.append(math.nan)
        if callback is not None:
            callback(it, train_hist[-1], val_hist[-1])
        if p.early_stopping_rounds > 0 and it - best_it >= p.early_stopping_rounds:
            break

    best_iteration = best_it if p.early_stopping_rounds > 0 else len(trees)
    model = BoostModel(base, trees, tuple(feature_names), p, best_iteration)
    return model, TrainingTrace(tuple(train_hist), tuple(val_hist))


def train(train_table, val_table, params: GbtParams, *, val_score=None, callback=None):
    """Fit a booster on a training table, monitoring a validation table.

    Squared-error loss: gradients ``pred - y`` and unit hessians. With
    ``early_stopping_rounds > 0`` training stops once validation RMSE has not
    strictly improved for that many consecutive trees and ``best_iteration``
    is the tree count at the minimum. ``val_score(iteration, val_pred)`` may
    replace the validation RMSE (used to script the stopping rule).

    Returns ``(BoostModel, TrainingTrace)``.
    """
    if train_table is None or len(train_table) == 0:
        raise TrainingError("training table is empty")
    Xv = yv = None
    if val_table is not None and len(val_table) > 0:
        Xv, yv = val_table.X, val_table.y
    return train_arrays(
        train_table.X,
        train_table.y,
        params,
        Xv,
        yv,
        feature_names=train_table.feature_names,
        val_score=val_score,
        callback=callback,
    )
