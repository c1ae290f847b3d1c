"""Compiled kernels: histograms, split search, leaf-wise growth, prediction."""
import numpy as np
from numba import njit

# histogram slots
G, H, C = 0, 1, 2


@njit(cache=True)
def build_histogram(binned, samples, grad, hess, n_bins_max):
    hist = np.empty((binned.shape[1], n_bins_max, 3))
    fill_histogram(hist, binned, samples, grad, hess)
    return hist


@njit(cache=True)
def fill_histogram(hist, binned, samples, grad, hess):
    n_features = binned.shape[1]
    hist[:] = 0.0
    # sample-outer order interleaves the per-feature accumulation chains
    for s in samples:
        g = grad[s]
        h = hess[s]
        for f in range(n_features):
            b = binned[s, f]
            hist[f, b, G] += g
            hist[f, b, H] += h
            hist[f, b, C] += 1.0


@njit(cache=True)
def split_gain(gl, hl, gr, hr, l2):
    return gl * gl / (hl + l2) + gr * gr / (hr + l2) - (gl + gr) * (gl + gr) / (hl + hr + l2)


@njit(cache=True)
def find_split(hist, n_bins, is_cat, g_tot, h_tot, c_tot, l2, min_leaf, min_gain):
    """Best (gain, feature, threshold, category mask) over all features.

    Continuous: left = bins <= threshold. Categorical: bins are ordered by
    G/H and left = the first ``threshold + 1`` of them. Only strictly better
    candidates replace the incumbent, so ties keep the lowest feature and
    threshold. ``feature == -1`` means no admissible split.
    """
    best_gain = -np.inf
    best_f = -1
    best_t = -1
    best_mask = np.uint64(0)
    n_features = hist.shape[0]
    for f in range(n_features):
        nb = n_bins[f]
        if is_cat[f]:
            # the last bin collects unseen categories and is always empty here
            m = 0
            cats = np.empty(nb, dtype=np.int64)
            ratios = np.empty(nb)
            for b in range(nb - 1):
                if hist[f, b, C] > 0:
                    cats[m] = b
                    h = hist[f, b, H]
                    ratios[m] = hist[f, b, G] / h if h > 0 else 0.0
                    m += 1
            if m < 2:
                continue
            order = np.argsort(ratios[:m], kind="mergesort")
            gl = 0.0
            hl = 0.0
            cl = 0.0
            mask = np.uint64(0)
            for t in range(m - 1):
                b = cats[order[t]]
                gl += hist[f, b, G]
                hl += hist[f, b, H]
                cl += hist[f, b, C]
                mask |= np.uint64(1) << np.uint64(b)
                cr = c_tot - cl
                if cl < min_leaf or cr < min_leaf:
                    continue
                gain = split_gain(gl, hl, g_tot - gl, h_tot - hl, l2)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
                    best_mask = mask
        else:
            gl = 0.0
            hl = 0.0
            cl = 0.0
            for t in range(nb - 1):
                gl += hist[f, t, G]
                hl += hist[f, t, H]
                cl += hist[f, t, C]
                if hist[f, t, C] == 0 and t > 0:
                    # same partition as threshold t - 1; keep the lower one
                    continue
                cr = c_tot - cl
                if cl < min_leaf:
                    continue
                if cr < min_leaf:
                    break
                gain = split_gain(gl, hl, g_tot - gl, h_tot - hl, l2)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
                    best_mask = np.uint64(0)
    if best_f >= 0 and not best_gain > min_gain:
        best_f = -1
    return best_gain, best_f, best_t, best_mask


@njit(cache=True)
def goes_left(bin_value, is_cat, threshold, mask):
    if is_cat:
        if bin_value >= 64:
            return False
        return (mask >> np.uint64(bin_value)) & np.uint64(1) == np.uint64(1)
    return bin_value <= threshold


@njit(cache=True)
def grow_tree(binned, grad, hess, n_bins, is_cat, max_depth, max_leaves, min_leaf, l2, min_gain, hists):
    """Leaf-wise growth: always split the open leaf with the largest gain.

    ``hists`` is scratch space of shape
    ``(2 * max_leaves - 1, n_features, max(n_bins), 3)``. Returns the node arrays, the leaf reached by each training sample, the
    order in which nodes were split, and a flag telling whether the depth
    limit ever overrode the choice an unlimited-depth grower would make.
    """
    n = binned.shape[0]
    n_features = binned.shape[1]
    n_bins_max = 0
    for f in range(n_features):
        n_bins_max = max(n_bins_max, n_bins[f])
    max_nodes = 2 * max_leaves - 1

    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.full(max_nodes, -1, dtype=np.int64)
    cat_mask = np.zeros(max_nodes, dtype=np.uint64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)
    gain = np.zeros(max_nodes)
    cover = np.zeros(max_nodes, dtype=np.int64)
    sum_g = np.zeros(max_nodes)
    sum_h = np.zeros(max_nodes)
    depth = np.zeros(max_nodes, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    stop = np.zeros(max_nodes, dtype=np.int64)
    split_order = np.full(max_nodes, -1, dtype=np.int64)

    cand_gain = np.full(max_nodes, -np.inf)
    cand_f = np.full(max_nodes, -1, dtype=np.int64)
    cand_t = np.full(max_nodes, -1, dtype=np.int64)
    cand_mask = np.zeros(max_nodes, dtype=np.uint64)
    is_open = np.zeros(max_nodes, dtype=np.bool_)

    order = np.arange(n)
    buf = np.empty(n, dtype=np.int64)

    fill_histogram(hists[0], binned, order, grad, hess)
    g0 = 0.0
    h0 = 0.0
    for s in range(n):
        g0 += grad[s]
        h0 += hess[s]
    sum_g[0] = g0
    sum_h[0] = h0
    cover[0] = n
    stop[0] = n
    n_nodes = 1
    is_open[0] = True
    if n >= 2 * min_leaf:
        cg, cf, ct, cm = find_split(hists[0], n_bins, is_cat, g0, h0, n, l2, min_leaf, min_gain)
        cand_gain[0] = cg
        cand_f[0] = cf
        cand_t[0] = ct
        cand_mask[0] = cm

    depth_limited = False
    n_leaves = 1
    n_splits = 0
    while n_leaves < max_leaves:
        best = -1
        best_any = -1
        for node in range(n_nodes):
            if not is_open[node] or cand_f[node] < 0:
                continue
            if best_any < 0 or cand_gain[node] > cand_gain[best_any]:
                best_any = node
            if depth[node] < max_depth:
                if best < 0 or cand_gain[node] > cand_gain[best]:
                    best = node
        if best_any >= 0 and depth[best_any] >= max_depth:
            depth_limited = True
        if best < 0:
            break

        node = best
        f = cand_f[node]
        t = cand_t[node]
        m = cand_mask[node]
        feature[node] = f
        threshold[node] = t
        cat_mask[node] = m
        gain[node] = cand_gain[node]
        is_open[node] = False
        split_order[n_splits] = node
        n_splits += 1

        # stable in-place partition of order[start:stop]
        lo = start[node]
        hi = stop[node]
        nl = 0
        nr = 0
        cat = is_cat[f]
        # branch-free: write to both sides, advance one
        for i in range(lo, hi):
            s = order[i]
            go = goes_left(binned[s, f], cat, t, m)
            order[lo + nl] = s
            buf[nr] = s
            nl += go
            nr += 1 - go
        for i in range(nr):
            order[lo + nl + i] = buf[i]

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        start[li] = lo
        stop[li] = lo + nl
        start[ri] = lo + nl
        stop[ri] = hi
        cover[li] = nl
        cover[ri] = nr
        for child in (li, ri):
            depth[child] = depth[node] + 1
            is_open[child] = True

        small, large = (li, ri) if nl <= nr else (ri, li)
        fill_histogram(hists[small], binned, order[start[small]:stop[small]], grad, hess)
        hp = hists[node]
        hs = hists[small]
        hl = hists[large]
        for f in range(n_features):
            for b in range(n_bins[f]):
                for j in range(3):
                    hl[f, b, j] = hp[f, b, j] - hs[f, b, j]
        for child in (li, ri):
            gs = 0.0
            hs = 0.0
            for b in range(n_bins[0]):
                gs += hists[child, 0, b, G]
                hs += hists[child, 0, b, H]
            sum_g[child] = gs
            sum_h[child] = hs
            if cover[child] >= 2 * min_leaf:
                cg, cf, ct, cm = find_split(
                    hists[child], n_bins, is_cat, gs, hs, cover[child], l2, min_leaf, min_gain
                )
                cand_gain[child] = cg
                cand_f[child] = cf
                cand_t[child] = ct
                cand_mask[child] = cm
        n_leaves += 1

    leaf_of = np.empty(n, dtype=np.int64)
    for node in range(n_nodes):
        if left[node] < 0:
            value[node] = -sum_g[node] / (sum_h[node] + l2)
            for i in range(start[node], stop[node]):
                leaf_of[order[i]] = node
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        cat_mask[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        gain[:n_nodes].copy(),
        cover[:n_nodes].copy(),
        sum_h[:n_nodes].copy(),
        depth[:n_nodes].copy(),
        split_order[:n_splits].copy(),
        leaf_of,
        depth_limited,
    )


@njit(cache=True)
def predict_leaves(binned, is_cat, offsets, feature, threshold, cat_mask, left, right):
    """Global node index of the leaf each sample reaches in every tree."""
    n = binned.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.empty((n, n_trees), dtype=np.int64)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while left[base + node] >= 0:
                f = feature[base + node]
                if goes_left(binned[i, f], is_cat[f], threshold[base + node], cat_mask[base + node]):
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i, t] = base + node
    return out


@njit(cache=True)
def accumulate_scores(binned, is_cat, offsets, tree_class, feature, threshold, cat_mask, left, right,
                      value, scale, scores):
    n = binned.shape[0]
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        k = tree_class[t]
        for i in range(n):
            node = 0
            while left[base + node] >= 0:
                f = feature[base + node]
                if goes_left(binned[i, f], is_cat[f], threshold[base + node], cat_mask[base + node]):
                    node = left[base + node]
                else:
                    node = right[base + node]
            scores[i, k] += scale * value[base + node]
    return scores


@njit(cache=True)
def softmax_round(scores, labels, grad, hess, with_derivatives):
    """Mean cross-entropy of class-major ``scores`` (K, n).

    When ``with_derivatives`` is set, also writes ``p - onehot`` and
    ``p (1 - p)`` into ``grad`` and ``hess`` (both (K, n)).
    """
    K, n = scores.shape
    m = scores[0].copy()
    for k in range(1, K):
        row = scores[k]
        for i in range(n):
            if row[i] > m[i]:
                m[i] = row[i]
    z = np.zeros(n)
    for k in range(K):
        row = scores[k]
        if with_derivatives:
            e = grad[k]
            for i in range(n):
                e[i] = np.exp(row[i] - m[i])
                z[i] += e[i]
        else:
            for i in range(n):
                z[i] += np.exp(row[i] - m[i])
    total = 0.0
    for i in range(n):
        total += m[i] + np.log(z[i]) - scores[labels[i], i]
    if with_derivatives:
        for k in range(K):
            g = grad[k]
            h = hess[k]
            for i in range(n):
                p = g[i] / z[i]
                g[i] = p
                h[i] = p * (1.0 - p)
        for i in range(n):
            grad[labels[i], i] -= 1.0
    return total / n
