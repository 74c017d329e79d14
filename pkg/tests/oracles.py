"""Independent reference computations used by the test-suite.

Nothing here imports the code under test.
"""
import numpy as np


def central_difference(f, arrays, eps=1e-6):
    """Gradient of scalar ``f(*arrays)`` w.r.t. every array by central differences."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            g[idx] = (f(*plus) - f(*minus)) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


def brute_force_retrieval(qf, q_ids, q_cams, gf, g_ids, g_cams, ks=(1, 5, 10, 20), distractor=-2):
    """CMC and mAP by explicit per-item rank counting (no sorting).

    The rank of gallery item j for a query is 1 + the number of kept items that
    are strictly closer, or equally close with a smaller row index.
    """
    n_eval, hits_at = 0, {k: 0 for k in ks}
    ap_sum = 0.0
    for qi in range(len(qf)):
        if q_ids[qi] == distractor:
            continue
        d = [float(np.sqrt(np.sum((np.asarray(qf[qi], float) - np.asarray(gf[j], float)) ** 2)))
             for j in range(len(gf))]
        kept = [j for j in range(len(gf)) if not (g_ids[j] == q_ids[qi] and g_cams[j] == q_cams[qi])]
        rank = {}
        for j in kept:
            rank[j] = 1 + sum(1 for o in kept if d[o] < d[j] or (d[o] == d[j] and o < j))
        true = [j for j in kept if g_ids[j] == q_ids[qi] and g_ids[j] != distractor]
        if not true:
            continue
        n_eval += 1
        true_ranks = sorted(rank[j] for j in true)
        for k in ks:
            if true_ranks[0] <= k:
                hits_at[k] += 1
        precisions = []
        for r in true_ranks:
            n_true_within = sum(1 for t in true_ranks if t <= r)
            precisions.append(n_true_within / r)
        ap_sum += sum(precisions) / len(precisions)
    if n_eval == 0:
        return None
    return {k: hits_at[k] / n_eval for k in ks}, ap_sum / n_eval, n_eval
