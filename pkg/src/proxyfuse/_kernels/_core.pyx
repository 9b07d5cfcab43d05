# Compiled versions of the hot kernels; see _fallback.py for the contracts.

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef void _sift_down(double* key, double* val, Py_ssize_t start, Py_ssize_t end) noexcept nogil:
    cdef Py_ssize_t root = start, child
    cdef double tk, tv
    while 2 * root + 1 <= end:
        child = 2 * root + 1
        if child + 1 <= end and key[child] < key[child + 1]:
            child += 1
        if key[root] < key[child]:
            tk = key[root]; key[root] = key[child]; key[child] = tk
            tv = val[root]; val[root] = val[child]; val[child] = tv
            root = child
        else:
            return


cdef void _heapsort_pairs(double* key, double* val, Py_ssize_t n) noexcept nogil:
    # sorts key ascending, permuting val alongside
    cdef Py_ssize_t start, end
    cdef double tk, tv
    if n < 2:
        return
    for start in range(n // 2 - 1, -1, -1):
        _sift_down(key, val, start, n - 1)
    for end in range(n - 1, 0, -1):
        tk = key[0]; key[0] = key[end]; key[end] = tk
        tv = val[0]; val[0] = val[end]; val[end] = tv
        _sift_down(key, val, 0, end - 1)


def best_split(double[:, ::1] X, double[::1] y, long[::1] feat_idx, Py_ssize_t min_leaf):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t nf = feat_idx.shape[0]
    cdef Py_ssize_t i, j, k, f
    cdef double total = 0.0
    cdef double sl, score, gain, best_gain = 0.0, best_thresh = np.nan
    cdef long best_feat = -1
    cdef double sse_parent_term

    if n < 2 * min_leaf:
        return -1, np.nan, 0.0

    xs_arr = np.empty(n, dtype=np.float64)
    ys_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] xs = xs_arr
    cdef double[::1] ys = ys_arr

    for i in range(n):
        total += y[i]
    sse_parent_term = total * total / n

    with nogil:
        for k in range(nf):
            f = feat_idx[k]
            for i in range(n):
                xs[i] = X[i, f]
                ys[i] = y[i]
            _heapsort_pairs(&xs[0], &ys[0], n)
            sl = 0.0
            for i in range(n - 1):
                sl += ys[i]
                j = i + 1
                if j < min_leaf or n - j < min_leaf:
                    continue
                if xs[i] >= xs[j]:
                    continue
                score = sl * sl / j + (total - sl) * (total - sl) / (n - j)
                gain = score - sse_parent_term
                if gain > best_gain:
                    best_gain = gain
                    best_feat = f
                    best_thresh = 0.5 * (xs[i] + xs[j])
                    if best_thresh >= xs[j]:
                        # midpoint rounded onto the right value; keep the
                        # left value so neither child can be empty
                        best_thresh = xs[i]
    return best_feat, best_thresh, best_gain


def kendall_dis(y_in):
    # merge sort works in place, so take a private copy
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.array(y_in, dtype=np.float64, copy=True)
    cdef Py_ssize_t n = y.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(n, dtype=np.float64)
    cdef long long count = 0
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k

    while width < n:
        lo = 0
        while lo + width < n:
            mid = lo + width
            hi = mid + width
            if hi > n:
                hi = n
            i = lo; j = mid; k = lo
            while i < mid and j < hi:
                if y[i] <= y[j]:
                    buf[k] = y[i]; i += 1
                else:
                    # y[i..mid) are all > y[j]
                    count += mid - i
                    buf[k] = y[j]; j += 1
                k += 1
            while i < mid:
                buf[k] = y[i]; i += 1; k += 1
            while j < hi:
                buf[k] = y[j]; j += 1; k += 1
            for k in range(lo, hi):
                y[k] = buf[k]
            lo += 2 * width
        width *= 2
    return int(count)
