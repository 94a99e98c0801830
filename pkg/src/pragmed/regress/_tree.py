"""Compiled CART regression trees (variance-reduction splits).

Trees are stored as flat node tables so they serialize trivially:
``feature[k] < 0`` marks a leaf; otherwise rows with
``X[:, feature[k]] <= threshold[k]`` go to ``left[k]``.
"""

import numpy as np
from numba import njit

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, nogil=True)
def _splitmix(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    zz = state
    zz = ((zz ^ (zz >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    zz = ((zz ^ (zz >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return state, zz ^ (zz >> np.uint64(31))


@njit(cache=True, nogil=True)
def _leaf_value(y, seg):
    # anchored mean: exact for constant targets
    base = y[seg[0]]
    acc = 0.0
    for i in range(seg.shape[0]):
        acc += y[seg[i]] - base
    return base + acc / seg.shape[0]


@njit(cache=True, nogil=True)
def build_tree(X, y, sample_idx, max_depth, min_samples_split, min_samples_leaf,
               max_features, seed):
    n = sample_idx.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    n_node = np.zeros(cap, np.int64)

    idx = sample_idx.copy()
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    count = 1
    state = np.uint64(seed)
    feats = np.arange(p)
    ys = np.empty(n)
    xs = np.empty(n)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        seg = idx[start:end]
        m = end - start
        value[node] = _leaf_value(y, seg)
        n_node[node] = m
        if depth >= max_depth or m < min_samples_split or m < 2 * min_samples_leaf:
            continue
        ymin = y[seg[0]]
        ymax = ymin
        total = 0.0
        for i in range(m):
            v = y[seg[i]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        if ymin == ymax:
            continue
        parent_score = total * total / m

        best_score = parent_score
        best_feat = -1
        best_thr = 0.0
        visited = 0
        for j in range(p):
            state, r = _splitmix(state)
            k = j + np.int64(r % np.uint64(p - j))
            tmp = feats[j]
            feats[j] = feats[k]
            feats[k] = tmp
            f = feats[j]
            for i in range(m):
                xs[i] = X[seg[i], f]
            xv = xs[:m]
            order = np.argsort(xv, kind="mergesort")
            if xv[order[0]] == xv[order[m - 1]]:
                continue
            visited += 1
            for i in range(m):
                ys[i] = y[seg[order[i]]]
            sl = 0.0
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                if nl < min_samples_leaf or m - nl < min_samples_leaf:
                    continue
                a = xv[order[i]]
                b = xv[order[i + 1]]
                if a == b:
                    continue
                sr = total - sl
                score = sl * sl / nl + sr * sr / (m - nl)
                if score > best_score:
                    best_score = score
                    best_feat = f
                    thr = 0.5 * (a + b)
                    if thr >= b:
                        thr = a
                    best_thr = thr
            if visited >= max_features:
                break

        if best_feat < 0 or best_score <= parent_score * (1.0 + 1e-12) + 1e-300:
            continue

        # partition seg in place (stable on both sides)
        nl = 0
        for i in range(m):
            if X[seg[i], best_feat] <= best_thr:
                nl += 1
        tmp_idx = seg.copy()
        a_pos = 0
        b_pos = nl
        for i in range(m):
            r_i = tmp_idx[i]
            if X[r_i, best_feat] <= best_thr:
                idx[start + a_pos] = r_i
                a_pos += 1
            else:
                idx[start + b_pos] = r_i
                b_pos += 1

        feature[node] = best_feat
        threshold[node] = best_thr
        lnode = count
        rnode = count + 1
        count += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered first
        st_node[sp] = rnode
        st_start[sp] = start + nl
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lnode
        st_start[sp] = start
        st_end[sp] = start + nl
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:count].copy(), threshold[:count].copy(), left[:count].copy(),
            right[:count].copy(), value[:count].copy(), n_node[:count].copy())


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out
