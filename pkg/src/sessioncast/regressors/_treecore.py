"""Compiled kernels for CART growth, tree traversal and SMO.

Everything here works on plain numpy arrays so the model classes can stay
ordinary Python objects. Trees are stored as parallel node arrays; node 0 is
the root and ``feature == -1`` marks a leaf.
"""

import numpy as np
from numba import njit

SQUARED_ERROR = 0
FRIEDMAN_MSE = 1
ABSOLUTE_ERROR = 2

_REL_TOL = 1e-10


@njit(cache=True)
def _fenwick_add(tree, i, v):
    i += 1
    n = tree.shape[0]
    while i < n:
        tree[i] += v
        i += i & (-i)


@njit(cache=True)
def _fenwick_sum(tree, i):
    # inclusive prefix sum over positions [0, i]
    s = 0.0
    i += 1
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def _fenwick_lower_bound(tree, target, log_n):
    # smallest position p with prefix_sum(p) >= target
    pos = 0
    rem = target
    step = 1 << log_n
    n = tree.shape[0]
    while step > 0:
        nxt = pos + step
        if nxt < n and tree[nxt] < rem:
            pos = nxt
            rem -= tree[nxt]
        step >>= 1
    return pos


@njit(cache=True)
def _weighted_median(vals, wts):
    order = np.argsort(vals, kind="mergesort")
    total = 0.0
    for k in range(wts.shape[0]):
        total += wts[k]
    half = 0.5 * total
    cum = 0.0
    lo = vals[order[0]]
    found_lo = False
    hi = lo
    for k in range(order.shape[0]):
        cum += wts[order[k]]
        if not found_lo and cum >= half:
            lo = vals[order[k]]
            found_lo = True
        if cum > half:
            hi = vals[order[k]]
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _sad_sweep(rows, y, w, out):
    """Prefix sums of absolute deviation about the running weighted median.

    ``out[k]`` receives the SAD of ``rows[0..k]`` (inclusive).
    """
    m = rows.shape[0]
    ys = np.empty(m)
    for k in range(m):
        ys[k] = y[rows[k]]
    rank_order = np.argsort(ys, kind="mergesort")
    rank = np.empty(m, dtype=np.int64)
    sorted_vals = np.empty(m)
    for r in range(m):
        rank[rank_order[r]] = r
        sorted_vals[r] = ys[rank_order[r]]
    cnt = np.zeros(m + 1)
    sm = np.zeros(m + 1)
    log_n = 0
    while (1 << (log_n + 1)) <= m:
        log_n += 1
    tot_w = 0.0
    tot_s = 0.0
    for k in range(m):
        wk = w[rows[k]]
        _fenwick_add(cnt, rank[k], wk)
        _fenwick_add(sm, rank[k], wk * ys[k])
        tot_w += wk
        tot_s += wk * ys[k]
        p = _fenwick_lower_bound(cnt, 0.5 * tot_w, log_n)
        if p >= m:
            p = m - 1
        med = sorted_vals[p]
        c_le = _fenwick_sum(cnt, p)
        s_le = _fenwick_sum(sm, p)
        sad = med * c_le - s_le + (tot_s - s_le) - med * (tot_w - c_le)
        out[k] = sad if sad > 0.0 else 0.0


@njit(cache=True)
def _node_stats(rows, y, w, criterion):
    m = rows.shape[0]
    tw = 0.0
    ts = 0.0
    for k in range(m):
        tw += w[rows[k]]
        ts += w[rows[k]] * y[rows[k]]
    mean = ts / tw
    if criterion == ABSOLUTE_ERROR:
        vals = np.empty(m)
        wts = np.empty(m)
        for k in range(m):
            vals[k] = y[rows[k]]
            wts[k] = w[rows[k]]
        med = _weighted_median(vals, wts)
        imp = 0.0
        for k in range(m):
            imp += wts[k] * abs(vals[k] - med)
        return tw, med, imp
    imp = 0.0
    for k in range(m):
        d = y[rows[k]] - mean
        imp += w[rows[k]] * d * d
    return tw, mean, imp


@njit(cache=True)
def _best_split_feature(rows, xcol, y, w, node_w, node_mean, criterion,
                        min_leaf, node_imp, sad_left, sad_right):
    """Scan one feature's presorted node rows; return (score, position)."""
    m = rows.shape[0]
    best = -1.0
    best_pos = -1
    if criterion == ABSOLUTE_ERROR:
        _sad_sweep(rows, y, w, sad_left)
        rev = rows[::-1].copy()
        _sad_sweep(rev, y, w, sad_right)
    wl = 0.0
    slc = 0.0
    sl = 0.0
    for k in range(m - 1):
        r = rows[k]
        wl += w[r]
        slc += w[r] * (y[r] - node_mean)
        sl += w[r] * y[r]
        if xcol[r] >= xcol[rows[k + 1]]:
            continue
        wr = node_w - wl
        if wl < min_leaf or wr < min_leaf:
            continue
        if criterion == SQUARED_ERROR:
            score = slc * slc * node_w / (wl * wr)
        elif criterion == FRIEDMAN_MSE:
            ml = sl / wl
            mr = (node_w * node_mean - sl) / wr
            diff = ml - mr
            score = wl * wr / node_w * diff * diff
        else:
            score = node_imp - sad_left[k] - sad_right[m - 2 - k]
        if score > best:
            best = score
            best_pos = k
    return best, best_pos


@njit(cache=True)
def grow_tree(X, y, w, order, feat_allowed, max_depth, min_samples_split,
              min_samples_leaf, criterion, min_gain):
    """Greedy depth-first CART growth on presorted feature orders.

    ``order[j]`` holds all row indices sorted by ``X[:, j]``; rows with zero
    weight are dropped first, so bootstrap multiplicities and subsampling are
    expressed through ``w`` alone.
    """
    n, p = X.shape
    keep = 0
    for i in range(n):
        if w[i] > 0:
            keep += 1
    ords = np.empty((p, keep), dtype=np.int64)
    for j in range(p):
        c = 0
        for k in range(n):
            r = order[j, k]
            if w[r] > 0:
                ords[j, c] = r
                c += 1
    cap = 2 * keep + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    weight = np.zeros(cap)
    improvement = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(keep, dtype=np.int64)
    sad_left = np.empty(keep)
    sad_right = np.empty(keep)

    n_nodes = 1
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = keep
    root_imp = -1.0
    while top >= 0:
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        top -= 1
        rows0 = ords[0, start:end]
        nw, nval, nimp = _node_stats(rows0, y, w, criterion)
        weight[node] = nw
        value[node] = nval
        if root_imp < 0.0:
            root_imp = nimp
        if depth[node] >= max_depth or nw < min_samples_split or nw < 2 * min_samples_leaf:
            continue
        if nimp <= 1e-14 * (root_imp + 1e-300):
            continue
        best = -1.0
        best_f = -1
        best_pos = -1
        for j in range(p):
            if not feat_allowed[j]:
                continue
            sc, pos = _best_split_feature(ords[j, start:end], X[:, j], y, w, nw, nval,
                                          criterion, min_samples_leaf, nimp,
                                          sad_left, sad_right)
            if pos >= 0 and sc > best:
                best = sc
                best_f = j
                best_pos = pos
        if best_f < 0:
            continue
        gain = best
        if gain <= _REL_TOL * nimp or gain < min_gain:
            continue
        seg = ords[best_f, start:end]
        lo = X[seg[best_pos], best_f]
        hi = X[seg[best_pos + 1], best_f]
        thr = 0.5 * (lo + hi)
        if thr >= hi:
            thr = lo
        n_left = best_pos + 1
        for k in range(end - start):
            r = seg[k]
            goes_left[r] = k < n_left
        # children at the depth limit only need ords[0] for their statistics
        n_part = 1 if depth[node] + 1 >= max_depth else p
        for j in range(n_part):
            a = 0
            b = n_left
            for k in range(start, end):
                r = ords[j, k]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for k in range(end - start):
                ords[j, start + k] = buf[k]
        feature[node] = best_f
        threshold[node] = thr
        improvement[node] = gain
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        depth[lnode] = depth[node] + 1
        depth[rnode] = depth[node] + 1
        top += 1
        stack_node[top] = rnode
        stack_start[top] = start + n_left
        stack_end[top] = end
        top += 1
        stack_node[top] = lnode
        stack_start[top] = start
        stack_end[top] = start + n_left
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), weight[:n_nodes].copy(),
            improvement[:n_nodes].copy(), depth[:n_nodes].copy())


@njit(cache=True)
def boost(X, y, order, weights, allowed, learning_rate, max_depth, min_gain, base):
    """Residual boosting rounds; row ``t`` of ``weights``/``allowed`` drives round ``t``.

    Returns the per-round node arrays concatenated, node offsets of each
    round (length ``n_rounds + 1``) and the training MSE after each round
    (index 0 is the base score's loss).
    """
    n = X.shape[0]
    n_rounds = weights.shape[0]
    pred = np.full(n, base)
    losses = np.empty(n_rounds + 1)
    offsets = np.zeros(n_rounds + 1, dtype=np.int64)
    parts = []
    loss = 0.0
    for i in range(n):
        loss += (y[i] - pred[i]) ** 2
    losses[0] = loss / n
    for t in range(n_rounds):
        resid = y - pred
        tree = grow_tree(X, resid, weights[t], order, allowed[t], max_depth,
                         2.0, 1.0, SQUARED_ERROR, min_gain)
        step = predict_tree(X, tree[0], tree[1], tree[2], tree[3], tree[4])
        loss = 0.0
        for i in range(n):
            pred[i] += learning_rate * step[i]
            loss += (y[i] - pred[i]) ** 2
        losses[t + 1] = loss / n
        offsets[t + 1] = offsets[t] + tree[0].shape[0]
        parts.append(tree)
    total = offsets[n_rounds]
    feature = np.empty(total, dtype=np.int64)
    threshold = np.empty(total)
    left = np.empty(total, dtype=np.int64)
    right = np.empty(total, dtype=np.int64)
    value = np.empty(total)
    weight = np.empty(total)
    improvement = np.empty(total)
    depth = np.empty(total, dtype=np.int64)
    for t in range(n_rounds):
        a = offsets[t]
        b = offsets[t + 1]
        tree = parts[t]
        feature[a:b] = tree[0]
        threshold[a:b] = tree[1]
        left[a:b] = tree[2]
        right[a:b] = tree[3]
        value[a:b] = tree[4]
        weight[a:b] = tree[5]
        improvement[a:b] = tree[6]
        depth[a:b] = tree[7]
    return (feature, threshold, left, right, value, weight, improvement, depth), offsets, losses


@njit(cache=True)
def truncate_tree(feature, left, right, weight, depth, max_depth, min_samples_split):
    """Map a grown tree onto the tree that stricter limits would have grown.

    Returns ``(keep_index, new_feature, new_left, new_right)`` where
    ``keep_index`` lists retained original node ids in new-id order.
    """
    n = feature.shape[0]
    keep = np.empty(n, dtype=np.int64)
    new_feature = np.empty(n, dtype=np.int64)
    new_left = np.empty(n, dtype=np.int64)
    new_right = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 1
    queue[0] = 0
    count = 1
    keep[0] = 0
    # new id of queue[k] is k
    while head < tail:
        old = queue[head]
        nid = head
        head += 1
        internal = (feature[old] >= 0 and depth[old] < max_depth
                    and weight[old] >= min_samples_split)
        if internal:
            new_feature[nid] = feature[old]
            queue[tail] = left[old]
            keep[tail] = left[old]
            new_left[nid] = tail
            tail += 1
            queue[tail] = right[old]
            keep[tail] = right[old]
            new_right[nid] = tail
            tail += 1
            count += 2
        else:
            new_feature[nid] = -1
            new_left[nid] = -1
            new_right[nid] = -1
    return keep[:count].copy(), new_feature[:count].copy(), new_left[:count].copy(), new_right[:count].copy()


@njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def smo_epsilon_svr(K, y, C, eps, tol, max_iter):
    """Pairwise SMO on the epsilon-SVR dual with second-order working sets.

    The 2n dual variables are ``beta = [alpha, alpha_star]`` with signs
    ``z = [+1]*n + [-1]*n``; the objective is
    ``0.5 * beta' Q beta + p' beta`` where ``Q_ij = z_i z_j K_(i mod n)(j mod n)``
    and ``p = [eps - y, eps + y]``. Returns ``(coef, rho, n_iter, objective)``
    with ``coef = alpha - alpha_star`` and decision ``coef @ k(x) - rho``.
    """
    n = y.shape[0]
    m = 2 * n
    beta = np.zeros(m)
    z = np.empty(m)
    pvec = np.empty(m)
    for i in range(n):
        z[i] = 1.0
        z[i + n] = -1.0
        pvec[i] = eps - y[i]
        pvec[i + n] = eps + y[i]
    grad = pvec.copy()
    tau = 1e-12
    it = 0
    while it < max_iter:
        # select i: maximal violating index among I_up
        gmax = -np.inf
        i_sel = -1
        for t in range(m):
            if (z[t] > 0 and beta[t] < C) or (z[t] < 0 and beta[t] > 0):
                v = -z[t] * grad[t]
                if v >= gmax:
                    gmax = v
                    i_sel = t
        gmin_val = np.inf
        j_sel = -1
        obj_min = np.inf
        if i_sel < 0:
            break
        ii = i_sel % n
        for t in range(m):
            if (z[t] > 0 and beta[t] > 0) or (z[t] < 0 and beta[t] < C):
                v = -z[t] * grad[t]
                if v <= gmin_val:
                    gmin_val = v
                b = gmax - v
                if b > 0:
                    tt = t % n
                    a = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                    if a <= 0:
                        a = tau
                    o = -(b * b) / a
                    if o <= obj_min:
                        obj_min = o
                        j_sel = t
        if gmax - gmin_val < tol or j_sel < 0:
            break
        i = i_sel
        j = j_sel
        ik = i % n
        jk = j % n
        qii = K[ik, ik]
        qjj = K[jk, jk]
        qij = z[i] * z[j] * K[ik, jk]
        old_bi = beta[i]
        old_bj = beta[j]
        if z[i] != z[j]:
            quad = qii + qjj + 2.0 * qij
            if quad <= 0:
                quad = tau
            delta = (-grad[i] - grad[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            else:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = C + diff
        else:
            quad = qii + qjj - 2.0 * qij
            if quad <= 0:
                quad = tau
            delta = (grad[i] - grad[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            else:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = total
        dbi = beta[i] - old_bi
        dbj = beta[j] - old_bj
        for t in range(m):
            tk = t % n
            grad[t] += z[t] * (z[i] * K[ik, tk] * dbi + z[j] * K[jk, tk] * dbj)
        it += 1
    # rho from free variables, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    sum_free = 0.0
    n_free = 0
    for t in range(m):
        yg = z[t] * grad[t]
        if beta[t] >= C:
            if z[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif beta[t] <= 0:
            if z[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    if n_free > 0:
        rho = sum_free / n_free
    else:
        rho = 0.5 * (ub + lb)
    coef = np.empty(n)
    for i in range(n):
        coef[i] = beta[i] - beta[i + n]
    obj = 0.0
    for t in range(m):
        obj += 0.5 * beta[t] * (grad[t] + pvec[t])
    return coef, rho, it, obj
