"""Level-wise tree growing kernels (numba and numpy twins).

Both split finders evaluate, for every active node, the regularised gain

    0.5 * [S(G_L)^2/(H_L+lam) + S(G_R)^2/(H_R+lam) - S(G)^2/(H+lam)] - gamma

with S the L1 soft-threshold, at every boundary between distinct feature
values (exact) or between non-empty bins (hist). Within a feature a
candidate wins only with strictly larger gain, scanning thresholds in
ascending order, so ties go to the smallest threshold; across features,
gains equal up to rounding go to the lowest feature (``pick_splits``).
Left sums accumulate sequentially from zero in value order in both paths,
which makes numba and numpy results identical. The loss is squared
error, so every hessian is 1 and hessian sums are row counts.
"""
import numpy as np

from .._jit import njit

MAX_BINS = 256
TIE_RTOL = 1e-12


@njit
def soft_threshold(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


def soft_threshold_np(g, alpha):
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


# ------------------------------------------------------------- node sums ---


@njit
def node_sums_nb(pos, g, h, n_nodes):
    G = np.zeros(n_nodes)
    H = np.zeros(n_nodes)
    for i in range(pos.shape[0]):
        nd = pos[i]
        if nd >= 0:
            G[nd] += g[i]
            H[nd] += h[i]
    return G, H


def node_sums_np(pos, g, h, n_nodes):
    keep = pos >= 0
    p = pos[keep]
    G = np.bincount(p, weights=g[keep], minlength=n_nodes).astype(np.float64)
    H = np.bincount(p, weights=h[keep], minlength=n_nodes).astype(np.float64)
    return G, H


# ----------------------------------------------------------- partition ---


@njit
def partition_nb(X, pos, node_feat, node_thr, node_left, node_right):
    for i in range(pos.shape[0]):
        nd = pos[i]
        if nd < 0:
            continue
        f = node_feat[nd]
        if f < 0:
            continue
        if X[i, f] < node_thr[nd]:
            pos[i] = node_left[nd]
        else:
            pos[i] = node_right[nd]


def partition_np(X, pos, node_feat, node_thr, node_left, node_right):
    rows = np.nonzero(pos >= 0)[0]
    nd = pos[rows]
    f = node_feat[nd]
    moving = f >= 0
    rows, nd, f = rows[moving], nd[moving], f[moving]
    go_left = X[rows, f] < node_thr[nd]
    pos[rows] = np.where(go_left, node_left[nd], node_right[nd])


# ---------------------------------------------------------- exact greedy ---


@njit
def find_splits_exact_nb(xs, order, gs, row_slot, nodeG, nodeH, feat_on, lam, alpha, gamma, mcw):
    """``gs[f, k]`` is the gradient of row ``order[f, k]``; hessians are 1."""
    m = nodeG.shape[0]
    F = xs.shape[0]
    n = xs.shape[1]
    best_gain = np.zeros((m, F))
    best_t = np.zeros((m, F))
    parent = np.empty(m)
    for s in range(m):
        t = soft_threshold(nodeG[s], alpha)
        parent[s] = t * t / (nodeH[s] + lam)
    GL = np.zeros(m)
    HL = np.zeros(m)
    last = np.zeros(m)
    for f in range(F):
        if not feat_on[f]:
            continue
        GL[:] = 0.0
        HL[:] = 0.0
        for k in range(n):
            s = row_slot[order[f, k]]
            if s < 0:
                continue
            x = xs[f, k]
            hl = HL[s]
            if hl > 0.0 and x != last[s]:
                hr = nodeH[s] - hl
                if hl >= mcw and hr >= mcw:
                    tl = soft_threshold(GL[s], alpha)
                    tr = soft_threshold(nodeG[s] - GL[s], alpha)
                    gain = 0.5 * (tl * tl / (hl + lam) + tr * tr / (hr + lam) - parent[s]) - gamma
                    if gain > best_gain[s, f]:
                        best_gain[s, f] = gain
                        best_t[s, f] = 0.5 * (last[s] + x)
            GL[s] += gs[f, k]
            HL[s] = hl + 1.0
            last[s] = x
    return best_gain, best_t, parent


def find_splits_exact_np(xs, order, gs, row_slot, nodeG, nodeH, feat_on, lam, alpha, gamma, mcw):
    m = nodeG.shape[0]
    best_gain = np.zeros((m, xs.shape[0]))
    best_t = np.zeros((m, xs.shape[0]))
    tp = soft_threshold_np(nodeG, alpha)
    parent = tp * tp / (nodeH + lam)
    for f in range(xs.shape[0]):
        if not feat_on[f]:
            continue
        slot = row_slot[order[f]]
        keep = slot >= 0
        slot, x, gv = slot[keep], xs[f][keep], gs[f][keep]
        grp = np.argsort(slot, kind="stable")
        slot, x, gv = slot[grp], x[grp], gv[grp]
        starts = np.searchsorted(slot, np.arange(m), side="left")
        ends = np.searchsorted(slot, np.arange(m), side="right")
        for s in range(m):
            a, b = starts[s], ends[s]
            if b - a < 2:
                continue
            xv = x[a:b]
            gl = np.cumsum(gv[a:b])[:-1]
            hl = np.arange(1, b - a, dtype=np.float64)
            hr = nodeH[s] - hl
            cand = (xv[1:] != xv[:-1]) & (hl >= mcw) & (hr >= mcw)
            if not cand.any():
                continue
            tl = soft_threshold_np(gl, alpha)
            tr = soft_threshold_np(nodeG[s] - gl, alpha)
            gain = 0.5 * (tl * tl / (hl + lam) + tr * tr / (hr + lam) - parent[s]) - gamma
            gain = np.where(cand, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best_gain[s, f]:
                best_gain[s, f] = gain[k]
                best_t[s, f] = 0.5 * (xv[k] + xv[k + 1])
    return best_gain, best_t, parent


def pick_splits(best_gain, best_t, parent):
    """Reduce per-(node, feature) best candidates to one split per node.

    Gains within ``TIE_RTOL`` (relative to the node's score) of the node's
    maximum count as tied and the lowest feature wins. Two features that
    induce the same partition have mathematically equal gains but reach them
    through different summation orders; without the tolerance a rounding
    error, not the tie-break, would decide. Returns ``(feature, threshold,
    gain)`` with feature -1 where no split has positive gain.
    """
    m = best_gain.shape[0]
    gmax = best_gain.max(axis=1) if best_gain.shape[1] else np.zeros(m)
    tol = TIE_RTOL * (np.abs(gmax) + parent)
    tied = (best_gain > 0.0) & (best_gain >= (gmax - tol)[:, None])
    f = np.argmax(tied, axis=1)
    rows = np.arange(m)
    ok = gmax > 0.0
    feat = np.where(ok, f, -1).astype(np.int64)
    thr = np.where(ok, best_t[rows, f], 0.0)
    gain = np.where(ok, best_gain[rows, f], 0.0)
    return feat, thr, gain


# ------------------------------------------------------------- histogram ---


def make_bins(X, max_bins=MAX_BINS):
    """Quantile bins per feature.

    Returns ``(B, nbins, cuts)``: bin index matrix (uint8-range int), bin
    counts per feature and the threshold separating bin b from b+1, placed
    midway between the largest value of bin b and the smallest of bin b+1.
    """
    n, F = X.shape
    B = np.zeros((n, F), dtype=np.uint8)
    nbins = np.zeros(F, dtype=np.int64)
    cuts = np.zeros((F, max_bins))
    for f in range(F):
        u = np.unique(X[:, f])
        if len(u) <= max_bins:
            upper = u
        else:
            srt = np.sort(X[:, f])
            qpos = (np.arange(1, max_bins) * n) // max_bins
            upper = np.unique(np.concatenate([srt[qpos - 1], u[-1:]]))
        nb = len(upper)
        nbins[f] = nb
        B[:, f] = np.searchsorted(upper, X[:, f], side="left")
        nxt = u[np.minimum(np.searchsorted(u, upper, side="right"), len(u) - 1)]
        cuts[f, :nb] = 0.5 * (upper + nxt)
    return B, nbins, cuts


@njit
def find_splits_hist_nb(B, nbins, cuts, g, row_slot, nodeG, nodeH, feat_on, lam, alpha, gamma, mcw):
    m = nodeG.shape[0]
    n, F = B.shape
    nb_max = cuts.shape[1]
    HG = np.zeros((m, F, nb_max))
    HH = np.zeros((m, F, nb_max))
    for i in range(n):
        s = row_slot[i]
        if s < 0:
            continue
        gi = g[i]
        for f in range(F):
            b = B[i, f]
            HG[s, f, b] += gi
            HH[s, f, b] += 1.0
    best_gain = np.zeros((m, F))
    best_t = np.zeros((m, F))
    parents = np.empty(m)
    for s in range(m):
        tp = soft_threshold(nodeG[s], alpha)
        parent = tp * tp / (nodeH[s] + lam)
        parents[s] = parent
        for f in range(F):
            if not feat_on[f]:
                continue
            gl = 0.0
            hl = 0.0
            prev = -1
            for b in range(nbins[f]):
                if HH[s, f, b] == 0.0:
                    continue
                if prev >= 0:
                    hr = nodeH[s] - hl
                    if hl >= mcw and hr >= mcw:
                        tl = soft_threshold(gl, alpha)
                        tr = soft_threshold(nodeG[s] - gl, alpha)
                        gain = 0.5 * (tl * tl / (hl + lam) + tr * tr / (hr + lam) - parent) - gamma
                        if gain > best_gain[s, f]:
                            best_gain[s, f] = gain
                            best_t[s, f] = cuts[f, prev]
                gl += HG[s, f, b]
                hl += HH[s, f, b]
                prev = b
    return best_gain, best_t, parents


def find_splits_hist_np(B, nbins, cuts, g, row_slot, nodeG, nodeH, feat_on, lam, alpha, gamma, mcw):
    m = nodeG.shape[0]
    F = B.shape[1]
    nb_max = cuts.shape[1]
    rows = np.nonzero(row_slot >= 0)[0]
    slot = row_slot[rows].astype(np.int64)
    best_gain = np.zeros((m, F))
    best_t = np.zeros((m, F))
    tp = soft_threshold_np(nodeG, alpha)
    parent = tp * tp / (nodeH + lam)
    for f in range(F):
        if not feat_on[f]:
            continue
        key = slot * nb_max + B[rows, f].astype(np.int64)
        HG = np.bincount(key, weights=g[rows], minlength=m * nb_max).reshape(m, nb_max)
        HH = np.bincount(key, minlength=m * nb_max).astype(np.float64).reshape(m, nb_max)
        for s in range(m):
            occupied = np.nonzero(HH[s, : nbins[f]] != 0.0)[0]
            if len(occupied) < 2:
                continue
            gl = np.cumsum(HG[s, occupied])[:-1]
            hl = np.cumsum(HH[s, occupied])[:-1]
            hr = nodeH[s] - hl
            ok = (hl >= mcw) & (hr >= mcw)
            if not ok.any():
                continue
            tl = soft_threshold_np(gl, alpha)
            tr = soft_threshold_np(nodeG[s] - gl, alpha)
            gain = 0.5 * (tl * tl / (hl + lam) + tr * tr / (hr + lam) - parent[s]) - gamma
            gain = np.where(ok, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best_gain[s, f]:
                best_gain[s, f] = gain[k]
                best_t[s, f] = cuts[f, occupied[k]]
    return best_gain, best_t, parent


# ------------------------------------------------------------ prediction ---


@njit
def predict_tree_nb(X, feat, thr, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        nd = 0
        while feat[nd] >= 0:
            if X[i, feat[nd]] < thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]
    return out


def predict_tree_np(X, feat, thr, left, right, value):
    n = X.shape[0]
    nd = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    while True:
        f = feat[nd]
        inner = f >= 0
        if not inner.any():
            break
        r = rows[inner]
        cur = nd[inner]
        go_left = X[r, f[inner]] < thr[cur]
        nd[inner] = np.where(go_left, left[cur], right[cur])
    return value[nd]


@njit
def predict_forest_nb(X, feat, thr, left, right, value, n_trees, eta, base):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = base
        for t in range(n_trees):
            nd = 0
            while feat[t, nd] >= 0:
                if X[i, feat[t, nd]] < thr[t, nd]:
                    nd = left[t, nd]
                else:
                    nd = right[t, nd]
            acc += eta * value[t, nd]
        out[i] = acc
    return out


def predict_forest_np(X, feat, thr, left, right, value, n_trees, eta, base):
    out = np.full(X.shape[0], base, dtype=np.float64)
    for t in range(n_trees):
        out += eta * predict_tree_np(X, feat[t], thr[t], left[t], right[t], value[t])
    return out
