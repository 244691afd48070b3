"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is not built or ``MIBENCH_PURE_PYTHON`` is set.
Selection rules (first index on ties) and update formulas follow the
compiled code line for line so both paths land on the same solution.
"""
import numpy as np

TAU = 1e-12
_CHUNK_BITS = 16


def signflip_count(d, threshold):
    d = np.ascontiguousarray(d, dtype=np.float64)
    n = d.shape[0]
    low = min(n, _CHUNK_BITS)
    # sums over the low bits by doubling: index bit k set means +d[k]
    low_sums = np.zeros(1)
    for k in range(low):
        low_sums = np.concatenate([low_sums - d[k], low_sums + d[k]])
    count = 0
    for hi in range(1 << (n - low)):
        hi_sum = 0.0
        for k in range(n - low):
            hi_sum = hi_sum + d[low + k] if (hi >> k) & 1 else hi_sum - d[low + k]
        count += int(np.count_nonzero(low_sums + hi_sum >= threshold))
    return count


def signed_rank_counts(ranks2):
    ranks2 = np.asarray(ranks2, dtype=np.int64)
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def smo_solve(Q, y, c, alpha, G, eps, max_iter):
    n = y.shape[0]
    QD = np.diag(Q).copy()
    pos = y > 0
    it = 0
    while it < max_iter:
        up = np.where(pos, alpha < c, alpha > 0)
        score = np.where(pos, -G, G)
        cand = np.where(up, score, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        if not up.any() or not gmax > -np.inf:
            return it, True
        low = np.where(pos, alpha > 0, alpha < c)
        low_score = np.where(pos, G, -G)
        gmax2 = low_score[low].max() if low.any() else -np.inf
        grad_diff = np.where(pos, gmax + G, gmax - G)
        yQ = y[i] * Q[i]
        quad = np.where(pos, QD[i] + QD - 2.0 * yQ, QD[i] + QD + 2.0 * yQ)
        quad = np.where(quad <= 0, TAU, quad)
        ok = low & (grad_diff > 0)
        if gmax + gmax2 < eps or not ok.any():
            return it, True
        obj = np.where(ok, -(grad_diff * grad_diff) / quad, np.inf)
        j = int(np.argmin(obj))

        old_i, old_j = alpha[i], alpha[j]
        ai, aj = old_i, old_j
        if y[i] != y[j]:
            qc = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if qc <= 0:
                qc = TAU
            delta = (-G[i] - G[j]) / qc
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            elif aj > c:
                aj, ai = c, c + diff
        else:
            qc = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if qc <= 0:
                qc = TAU
            delta = (G[i] - G[j]) / qc
            total = ai + aj
            ai -= delta
            aj += delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            elif aj < 0:
                aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Q[i] * (ai - old_i) + Q[j] * (aj - old_j)
        it += 1
    return it, False
