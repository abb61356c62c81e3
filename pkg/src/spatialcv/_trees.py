"""Numba kernels for growing and evaluating CART regression trees.

Randomness inside a tree comes from a SplitMix64 stream whose 64-bit state is
handed in by the caller. The stream is consumed in a fixed order: ``n``
bootstrap draws first, then the feature draws of every split attempt in
depth-first (pre-order) node order.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def _randbelow(state, n):
    u = (_next_u64(state) >> _S11) * _TO_UNIT
    k = np.int64(u * n)
    if k >= n:
        k = n - 1
    return k


@njit(cache=True, nogil=True)
def draw_bootstrap(seed_state, n):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed_state
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _randbelow(state, n)
    return out


@njit(cache=True, nogil=True)
def _sort_by_rank(rk, ix, cnt, rk_tmp, ix_tmp, counts, passes):
    """Stable sort of ``(rk, ix)[:cnt]`` by ``rk``; returns the arrays holding the result."""
    if cnt <= 32:
        for a in range(1, cnt):
            r = rk[a]
            v = ix[a]
            b = a - 1
            while b >= 0 and rk[b] > r:
                rk[b + 1] = rk[b]
                ix[b + 1] = ix[b]
                b -= 1
            rk[b + 1] = r
            ix[b + 1] = v
        return rk, ix
    src_r, src_i, dst_r, dst_i = rk, ix, rk_tmp, ix_tmp
    for p in range(passes):
        shift = 8 * p
        counts[:] = 0
        for k in range(cnt):
            counts[(src_r[k] >> shift) & 255] += 1
        total = 0
        for d in range(256):
            c = counts[d]
            counts[d] = total
            total += c
        for k in range(cnt):
            d = (src_r[k] >> shift) & 255
            pos = counts[d]
            dst_r[pos] = src_r[k]
            dst_i[pos] = src_i[k]
            counts[d] = pos + 1
        src_r, src_i, dst_r, dst_i = dst_r, dst_i, src_r, src_i
    return src_r, src_i


@njit(cache=True, nogil=True)
def grow_tree(X, ranks, y, min_node_size, mtry, seed_state, bootstrap):
    """Grow one tree; returns ``(feature, threshold, left, right, value)``.

    ``ranks`` holds the dense rank of every value within its column, so that
    sorting a node reduces to a radix sort of small integers. ``feature[i] == -1`` marks
    a leaf. A node with more than ``min_node_size``
    samples is split on the best midpoint threshold among ``mtry`` randomly
    drawn features, provided the split strictly reduces the squared error.
    """
    n, p = X.shape
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed_state
    samples = np.empty(n, dtype=np.int64)
    if bootstrap:
        for i in range(n):
            samples[i] = _randbelow(state, n)
    else:
        for i in range(n):
            samples[i] = i

    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    feats = np.arange(p)
    chosen = np.empty(mtry, dtype=np.int64)
    rk = np.empty(n, dtype=np.int64)
    ix = np.empty(n, dtype=np.int64)
    rk_tmp = np.empty(n, dtype=np.int64)
    ix_tmp = np.empty(n, dtype=np.int64)
    counts = np.empty(256, dtype=np.int64)
    passes = 1
    while (1 << (8 * passes)) < n:
        passes += 1
    ys = np.empty(n)

    n_nodes = 1
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        cnt = end - start

        y0 = y[samples[start]]
        ymin = y0
        ymax = y0
        s = 0.0
        for k in range(start, end):
            v = y[samples[k]]
            s += v - y0
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        mean = y0 + s / cnt

        best_f = -1
        best_thr = 0.0
        if cnt > min_node_size and ymax > ymin:
            for j in range(mtry):
                r = j + _randbelow(state, p - j)
                tmp = feats[j]
                feats[j] = feats[r]
                feats[r] = tmp
            for j in range(mtry):
                chosen[j] = feats[j]
            chosen.sort()

            sse = 0.0
            for k in range(start, end):
                d = y[samples[k]] - mean
                sse += d * d
            best_gain = 0.0
            for j in range(mtry):
                f = chosen[j]
                for k in range(cnt):
                    rk[k] = ranks[samples[start + k], f]
                    ix[k] = start + k
                srt_r, srt_i = _sort_by_rank(rk, ix, cnt, rk_tmp, ix_tmp, counts, passes)
                total = 0.0
                for k in range(cnt):
                    ys[k] = y[samples[srt_i[k]]] - mean
                    total += ys[k]
                base = total * total / cnt
                s_left = 0.0
                for k in range(cnt - 1):
                    s_left += ys[k]
                    if srt_r[k] < srt_r[k + 1]:
                        n_left = k + 1
                        s_right = total - s_left
                        gain = s_left * s_left / n_left + s_right * s_right / (cnt - n_left) - base
                        if gain > best_gain:
                            best_gain = gain
                            best_f = f
                            a = X[samples[srt_i[k]], f]
                            b = X[samples[srt_i[k + 1]], f]
                            thr = a + 0.5 * (b - a)
                            if thr >= b:
                                thr = a
                            best_thr = thr
            if best_f >= 0 and not best_gain > 1e-14 * sse:
                best_f = -1

        if best_f < 0:
            leaf = mean
            if leaf < ymin:
                leaf = ymin
            if leaf > ymax:
                leaf = ymax
            value[node] = leaf
            continue

        # in-place partition of samples[start:end]
        i = start
        k = end - 1
        while i <= k:
            if X[samples[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = samples[i]
                samples[i] = samples[k]
                samples[k] = tmp
                k -= 1
        mid = i
        feature[node] = best_f
        threshold[node] = best_thr
        value[node] = mean
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # right pushed first so the left subtree is grown first
        st_node[sp] = n_nodes + 1
        st_start[sp] = mid
        st_end[sp] = end
        sp += 1
        st_node[sp] = n_nodes
        st_start[sp] = start
        st_end[sp] = mid
        sp += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def predict_forest(X, roots, feature, threshold, left, right, value, lo, hi):
    m = X.shape[0]
    n_trees = roots.shape[0]
    first = np.empty(m)
    acc = np.zeros(m)
    for t in range(n_trees):
        root = roots[t]
        for i in range(m):
            node = root
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            if t == 0:
                first[i] = value[node]
            else:
                acc[i] += value[node] - first[i]
    out = np.empty(m)
    for i in range(m):
        pred = first[i] + acc[i] / n_trees
        if pred < lo:
            pred = lo
        if pred > hi:
            pred = hi
        out[i] = pred
    return out
