"""Compiled inner loops for tree growth and prediction.

Everything here is ``nogil`` so tree fits and tree evaluations can run on a
thread pool. Feature matrices for growth are passed transposed, ``(d, N)``
C-order, so one feature's column is contiguous during split scans.

Randomness comes from a splitmix64 stream whose whole state is a one-element
``uint64`` array owned by the caller.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ENTROPY = 0
GINI = 1

STANDARD = 0
EXTRA_RANDOM = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(nogil=True, cache=True)
def next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(nogil=True, cache=True)
def next_open_unit(state):
    """Uniform double in the open interval (0, 1)."""
    return (float(next_u64(state) >> _S11) + 0.5) * _INV53


@njit(nogil=True, cache=True)
def next_below(state, n):
    """Uniform integer in [0, n)."""
    k = int(next_open_unit(state) * n)
    return k if k < n else n - 1


@njit(nogil=True, cache=True)
def impurity_of(counts, n, criterion):
    # Pinned float expression: the brute-force oracle repeats it verbatim.
    if criterion == ENTROPY:
        h = 0.0
        for k in range(counts.shape[0]):
            c = counts[k]
            if c > 0:
                p = c / n
                h -= p * np.log2(p)
        return h
    s = 0.0
    for k in range(counts.shape[0]):
        p = counts[k] / n
        s += p * p
    return 1.0 - s


@njit(nogil=True, cache=True)
def decrease_of(parent_imp, left, nl, right, nr, criterion):
    n = nl + nr
    return parent_imp - (nl * impurity_of(left, nl, criterion) + nr * impurity_of(right, nr, criterion)) / n


@njit(nogil=True, cache=True)
def _better(dec, f, thr, best_dec, best_f, best_thr):
    if dec > best_dec:
        return True
    if dec == best_dec and best_f >= 0:
        if f < best_f:
            return True
        if f == best_f and thr < best_thr:
            return True
    return False


@njit(nogil=True, cache=True)
def split_standard(Xt, y, rows, start, end, feats, n_classes, criterion, min_leaf, out):
    """Best midpoint split over ``feats`` for rows[start:end].

    Writes (feature, threshold, decrease) into ``out``; feature -1 means no
    split with a strictly positive impurity decrease exists.
    """
    n = end - start
    parent = np.zeros(n_classes, np.int64)
    for i in range(start, end):
        parent[y[rows[i]]] += 1
    parent_imp = impurity_of(parent, n, criterion)
    best_f = -1
    best_thr = 0.0
    best_dec = 0.0
    vals = np.empty(n, np.float64)
    labs = np.empty(n, np.int64)
    left = np.empty(n_classes, np.int64)
    right = np.empty(n_classes, np.int64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        col = Xt[f]
        lo = np.inf
        hi = -np.inf
        for i in range(n):
            v = col[rows[start + i]]
            vals[i] = v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo == hi:
            continue
        order = np.argsort(vals)
        for i in range(n):
            labs[i] = y[rows[start + order[i]]]
        left[:] = 0
        for i in range(n - 1):
            left[labs[i]] += 1
            a = vals[order[i]]
            b = vals[order[i + 1]]
            if b <= a:
                continue
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            for k in range(n_classes):
                right[k] = parent[k] - left[k]
            dec = decrease_of(parent_imp, left, nl, right, nr, criterion)
            thr = 0.5 * (a + b)
            if thr >= b:
                thr = a
            if dec > 0.0 and _better(dec, f, thr, best_dec, best_f, best_thr):
                best_dec = dec
                best_f = f
                best_thr = thr
    out[0] = best_f
    out[1] = best_thr
    out[2] = best_dec


@njit(nogil=True, cache=True)
def split_extra(Xt, y, rows, start, end, feats, uniforms, n_classes, criterion, min_leaf, out):
    """One random threshold per non-constant feature; keep the best candidate.

    ``uniforms[i]`` in (0, 1) places the threshold for ``feats[i]`` inside the
    node's (min, max) range. Feature -1 in ``out`` means every feature was
    constant (or every candidate violated ``min_leaf``).
    """
    n = end - start
    parent = np.zeros(n_classes, np.int64)
    for i in range(start, end):
        parent[y[rows[i]]] += 1
    parent_imp = impurity_of(parent, n, criterion)
    best_f = -1
    best_thr = 0.0
    best_dec = -np.inf
    left = np.empty(n_classes, np.int64)
    right = np.empty(n_classes, np.int64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        col = Xt[f]
        lo = np.inf
        hi = -np.inf
        for i in range(start, end):
            v = col[rows[i]]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo == hi:
            continue
        thr = lo + uniforms[fi] * (hi - lo)
        if not (lo < thr < hi):
            thr = 0.5 * (lo + hi)
            if not (lo < thr < hi):
                thr = lo
        left[:] = 0
        nl = 0
        for i in range(start, end):
            r = rows[i]
            if col[r] <= thr:
                left[y[r]] += 1
                nl += 1
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        for k in range(n_classes):
            right[k] = parent[k] - left[k]
        dec = decrease_of(parent_imp, left, nl, right, nr, criterion)
        if _better(dec, f, thr, best_dec, best_f, best_thr):
            best_dec = dec
            best_f = f
            best_thr = thr
    out[0] = best_f
    out[1] = best_thr
    out[2] = best_dec if best_f >= 0 else 0.0


@njit(nogil=True, cache=True)
def grow_tree(Xt, y, n_classes, kind, criterion, max_depth, min_split, min_leaf,
              mtry, bootstrap, seed):
    """Grow one tree depth-first; nodes come out in preorder.

    Returns (feature, threshold, left, right, value). ``feature[i] == -1`` marks
    a leaf; ``value`` rows of internal nodes are zero. ``max_depth < 0`` means
    unlimited.
    """
    d = Xt.shape[0]
    N = y.shape[0]
    state = np.empty(1, np.uint64)
    state[0] = seed
    rows = np.empty(N, np.int64)
    if bootstrap:
        for i in range(N):
            rows[i] = next_below(state, N)
    else:
        for i in range(N):
            rows[i] = i

    cap = 2 * N + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros((cap, n_classes), np.float64)

    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_side = np.empty(cap, np.int64)
    sp = 0
    st_start[0] = 0
    st_end[0] = N
    st_depth[0] = 0
    st_parent[0] = -1
    st_side[0] = 0
    sp = 1

    perm = np.arange(d)
    feats = np.empty(mtry, np.int64)
    uniforms = np.empty(mtry, np.float64)
    counts = np.empty(n_classes, np.int64)
    best = np.empty(3, np.float64)
    n_nodes = 0
    while sp > 0:
        sp -= 1
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_side[sp] == 0:
                left[parent] = node
            else:
                right[parent] = node
        n = end - start
        counts[:] = 0
        for i in range(start, end):
            counts[y[rows[i]]] += 1
        n_present = 0
        for k in range(n_classes):
            if counts[k] > 0:
                n_present += 1
        split = not (depth == max_depth or n < min_split or n_present <= 1)
        if split:
            for i in range(mtry):
                j = i + next_below(state, d - i)
                t = perm[i]
                perm[i] = perm[j]
                perm[j] = t
                feats[i] = perm[i]
            if kind == STANDARD:
                split_standard(Xt, y, rows, start, end, feats, n_classes, criterion, min_leaf, best)
            else:
                for i in range(mtry):
                    uniforms[i] = next_open_unit(state)
                split_extra(Xt, y, rows, start, end, feats, uniforms, n_classes, criterion, min_leaf, best)
            split = best[0] >= 0
        if not split:
            for k in range(n_classes):
                value[node, k] = counts[k] / n
            continue
        f = int(best[0])
        thr = best[1]
        feature[node] = f
        threshold[node] = thr
        col = Xt[f]
        i = start
        j = end - 1
        while i <= j:
            if col[rows[i]] <= thr:
                i += 1
            else:
                t = rows[i]
                rows[i] = rows[j]
                rows[j] = t
                j -= 1
        mid = i
        # Push right first so the left subtree is numbered first (preorder).
        st_start[sp] = mid
        st_end[sp] = end
        st_depth[sp] = depth + 1
        st_parent[sp] = node
        st_side[sp] = 1
        sp += 1
        st_start[sp] = start
        st_end[sp] = mid
        st_depth[sp] = depth + 1
        st_parent[sp] = node
        st_side[sp] = 0
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(nogil=True, cache=True)
def apply_tree(feature, threshold, left, right, X, out):
    """Leaf index reached by every row of ``X`` (go left iff x <= threshold)."""
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node


@njit(nogil=True, cache=True)
def write_tree_proba(feature, threshold, left, right, value, X, out, col0):
    """Write the tree's leaf vectors into ``out[:, col0:col0+K]``."""
    K = value.shape[1]
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        for k in range(K):
            out[i, col0 + k] = value[node, k]


@njit(nogil=True, cache=True)
def add_tree_proba(feature, threshold, left, right, value, X, acc):
    """``acc += `` the tree's leaf vectors, row by row."""
    K = value.shape[1]
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        for k in range(K):
            acc[i, k] += value[node, k]
