# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel primitives.

Mirrors ``pure.py`` exactly: same arithmetic, same orderings, identical
outputs. Only the loop machinery differs.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel import prange
from libc.math cimport INFINITY

cnp.import_array()

ctypedef fused floating:
    float
    double


# ---------------------------------------------------------------------------
# convolution patch gather / scatter
# ---------------------------------------------------------------------------

def im2col(x, int kh, int kw, int stride, int pad):
    """Gather conv patches from NHWC input: (n,h,w,c) -> (n*oh*ow, kh*kw*c)."""
    x = np.ascontiguousarray(x)
    if x.dtype != np.float32:
        x = np.asarray(x, dtype=np.float64)
    return _im2col_impl(x, kh, kw, stride, pad)


def col2im(cols, int n, int h, int w, int c, int kh, int kw, int stride, int pad):
    """Scatter-add NHWC conv patches back into (n,h,w,c)."""
    cols = np.ascontiguousarray(cols)
    if cols.dtype != np.float32:
        cols = np.asarray(cols, dtype=np.float64)
    return _col2im_impl(cols, n, h, w, c, kh, kw, stride, pad)


cdef inline int _int_max(int a, int b) nogil:
    return a if a > b else b


cdef inline int _int_min(int a, int b) nogil:
    return a if a < b else b


def _im2col_impl(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef int n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef int hp = h + 2 * pad, wp = w + 2 * pad
    cdef int oh = (hp - kh) // stride + 1
    cdef int ow = (wp - kw) // stride + 1
    out_np = np.zeros((<Py_ssize_t>n * oh * ow, kh * kw * c),
                      dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, ::1] out = out_np
    cdef int i, oy, ox, ky, kx, ci, sy, sx
    cdef Py_ssize_t row
    # writes stream sequentially; reads re-walk each input row kh times
    for i in prange(n, nogil=True, schedule="static"):
        for oy in range(oh):
            for ox in range(ow):
                row = (<Py_ssize_t>i * oh + oy) * ow + ox
                for ky in range(kh):
                    sy = oy * stride + ky - pad
                    if sy < 0 or sy >= h:
                        continue
                    for kx in range(kw):
                        sx = ox * stride + kx - pad
                        if sx < 0 or sx >= w:
                            continue
                        for ci in range(c):
                            out[row, (ky * kw + kx) * c + ci] = x[i, sy, sx, ci]
    return out_np


def _col2im_impl(floating[:, ::1] cols, int n, int h, int w, int c,
                 int kh, int kw, int stride, int pad):
    cdef int hp = h + 2 * pad, wp = w + 2 * pad
    cdef int oh = (hp - kh) // stride + 1
    cdef int ow = (wp - kw) // stride + 1
    out_np = np.zeros((n, h, w, c), dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] out = out_np
    cdef int i, oy, ox, ky, kx, ci, sy, sx
    cdef Py_ssize_t row
    # batch items write disjoint slabs: parallel across i; per-cell the
    # (oy, ox, ky, kx) accumulation order is fixed, matching the pure backend
    for i in prange(n, nogil=True, schedule="static"):
        for ky in range(kh):
            for kx in range(kw):
                for oy in range(oh):
                    sy = oy * stride + ky - pad
                    if sy < 0 or sy >= h:
                        continue
                    for ox in range(ow):
                        sx = ox * stride + kx - pad
                        if sx < 0 or sx >= w:
                            continue
                        row = (<Py_ssize_t>i * oh + oy) * ow + ox
                        for ci in range(c):
                            out[i, sy, sx, ci] += cols[row, (ky * kw + kx) * c + ci]
    return out_np


# ---------------------------------------------------------------------------
# exact Euclidean distance transform
# ---------------------------------------------------------------------------

DEF EDT_FAR = 1e20  # finite far sentinel; see the fallback for rationale


def edt_sq(mask):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef int h = m.shape[0], w = m.shape[1]
    g_np = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] g = g_np
    cdef int x, y, last
    cdef double d
    for x in range(w):
        last = -1
        for y in range(h):
            if m[y, x] == 0:
                last = y
                g[y, x] = 0.0
            elif last >= 0:
                d = <double>(y - last)
                g[y, x] = d * d
            else:
                g[y, x] = EDT_FAR
        last = -1
        for y in range(h - 1, -1, -1):
            if m[y, x] == 0:
                last = y
            elif last >= 0:
                d = <double>(last - y)
                d = d * d
                if d < g[y, x]:
                    g[y, x] = d
    out_np = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    v_np = np.empty(w, dtype=np.int64)
    z_np = np.empty(w + 1, dtype=np.float64)
    cdef cnp.int64_t[::1] v = v_np
    cdef double[::1] z = z_np
    cdef int q, k
    cdef cnp.int64_t vk
    cdef double s, fq
    for y in range(h):
        k = 0
        v[0] = 0
        z[0] = -INFINITY
        z[1] = INFINITY
        for q in range(1, w):
            fq = g[y, q]
            while True:
                vk = v[k]
                s = ((fq + q * q) - (g[y, vk] + vk * vk)) / (2.0 * q - 2.0 * vk)
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = INFINITY
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            vk = v[k]
            out[y, q] = (q - vk) * (q - vk) + g[y, vk]
    return out_np


# ---------------------------------------------------------------------------
# connected components (raster-scan BFS, labels in discovery order)
# ---------------------------------------------------------------------------

def label_components(mask, int connectivity):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef int h = m.shape[0], w = m.shape[1]
    labels_np = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] labels = labels_np
    cdef int noffs = 8 if connectivity == 8 else 4
    cdef int[8] dy = [-1, 1, 0, 0, -1, -1, 1, 1]
    cdef int[8] dx = [0, 0, -1, 1, -1, 1, -1, 1]
    qy_np = np.empty(h * w, dtype=np.int32)
    qx_np = np.empty(h * w, dtype=np.int32)
    cdef cnp.int32_t[::1] qy = qy_np
    cdef cnp.int32_t[::1] qx = qx_np
    cdef int n = 0, head, tail, y0, x0, y, x, yy, xx, j
    for y0 in range(h):
        for x0 in range(w):
            if m[y0, x0] == 0 or labels[y0, x0] != 0:
                continue
            n += 1
            head = 0
            tail = 0
            qy[tail] = y0
            qx[tail] = x0
            tail += 1
            labels[y0, x0] = n
            while head < tail:
                y = qy[head]
                x = qx[head]
                head += 1
                for j in range(noffs):
                    yy = y + dy[j]
                    xx = x + dx[j]
                    if 0 <= yy < h and 0 <= xx < w and m[yy, xx] != 0 and labels[yy, xx] == 0:
                        labels[yy, xx] = n
                        qy[tail] = yy
                        qx[tail] = xx
                        tail += 1
    return labels_np, n


# ---------------------------------------------------------------------------
# Zhang-Suen thinning (simultaneous removal per subiteration)
# ---------------------------------------------------------------------------

def thin(mask):
    cdef int h = mask.shape[0], w = mask.shape[1]
    img_np = np.zeros((h + 2, w + 2), dtype=np.uint8)
    img_np[1:-1, 1:-1] = np.asarray(mask, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] img = img_np
    flag_np = np.zeros((h + 2, w + 2), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] flag = flag_np
    cdef int y, x, step, b, a, i, changed, any_change
    cdef int[8] ring
    while True:
        any_change = 0
        for step in range(2):
            changed = 0
            for y in range(1, h + 1):
                for x in range(1, w + 1):
                    flag[y, x] = 0
                    if img[y, x] == 0:
                        continue
                    ring[0] = img[y - 1, x]
                    ring[1] = img[y - 1, x + 1]
                    ring[2] = img[y, x + 1]
                    ring[3] = img[y + 1, x + 1]
                    ring[4] = img[y + 1, x]
                    ring[5] = img[y + 1, x - 1]
                    ring[6] = img[y, x - 1]
                    ring[7] = img[y - 1, x - 1]
                    b = 0
                    a = 0
                    for i in range(8):
                        b += ring[i]
                        if ring[i] == 0 and ring[(i + 1) % 8] == 1:
                            a += 1
                    if b < 2 or b > 6 or a != 1:
                        continue
                    if step == 0:
                        if ring[0] * ring[2] * ring[4] == 0 and ring[2] * ring[4] * ring[6] == 0:
                            flag[y, x] = 1
                            changed = 1
                    else:
                        if ring[0] * ring[2] * ring[6] == 0 and ring[0] * ring[4] * ring[6] == 0:
                            flag[y, x] = 1
                            changed = 1
            if changed:
                any_change = 1
                for y in range(1, h + 1):
                    for x in range(1, w + 1):
                        if flag[y, x]:
                            img[y, x] = 0
        if not any_change:
            break
    return img_np[1:-1, 1:-1].astype(bool)


# ---------------------------------------------------------------------------
# grayscale reconstruction by dilation (sequential raster scans)
# ---------------------------------------------------------------------------

def reconstruct(marker, mask_img):
    cur_np = np.minimum(marker, mask_img).astype(np.float64)
    cdef double[:, ::1] cur = cur_np
    cdef double[:, ::1] lim = np.ascontiguousarray(mask_img, dtype=np.float64)
    cdef int h = cur.shape[0], w = cur.shape[1]
    cdef int y, x, changed
    cdef double v
    while True:
        changed = 0
        for y in range(h):
            for x in range(w):
                v = cur[y, x]
                if y > 0:
                    if cur[y - 1, x] > v:
                        v = cur[y - 1, x]
                    if x > 0 and cur[y - 1, x - 1] > v:
                        v = cur[y - 1, x - 1]
                    if x < w - 1 and cur[y - 1, x + 1] > v:
                        v = cur[y - 1, x + 1]
                if x > 0 and cur[y, x - 1] > v:
                    v = cur[y, x - 1]
                if v > lim[y, x]:
                    v = lim[y, x]
                if v > cur[y, x]:
                    cur[y, x] = v
                    changed = 1
        for y in range(h - 1, -1, -1):
            for x in range(w - 1, -1, -1):
                v = cur[y, x]
                if y < h - 1:
                    if cur[y + 1, x] > v:
                        v = cur[y + 1, x]
                    if x > 0 and cur[y + 1, x - 1] > v:
                        v = cur[y + 1, x - 1]
                    if x < w - 1 and cur[y + 1, x + 1] > v:
                        v = cur[y + 1, x + 1]
                if x < w - 1 and cur[y, x + 1] > v:
                    v = cur[y, x + 1]
                if v > lim[y, x]:
                    v = lim[y, x]
                if v > cur[y, x]:
                    cur[y, x] = v
                    changed = 1
        if not changed:
            return cur_np


# ---------------------------------------------------------------------------
# marker-based watershed flooding (binary heap, FIFO tie-break)
# ---------------------------------------------------------------------------

cdef inline bint _heap_less(double pa, long ca, double pb, long cb) nogil:
    # max-priority first; equal priorities pop in insertion order
    if pa != pb:
        return pa > pb
    return ca < cb


def watershed_flood(priority, mask, markers):
    cdef double[:, ::1] pri = np.ascontiguousarray(priority, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    labels_np = np.ascontiguousarray(markers, dtype=np.int32).copy()
    cdef cnp.int32_t[:, ::1] labels = labels_np
    cdef int h = pri.shape[0], w = pri.shape[1]
    cdef Py_ssize_t cap = <Py_ssize_t>h * w + 1
    hp_np = np.empty(cap, dtype=np.float64)
    hc_np = np.empty(cap, dtype=np.int64)
    hy_np = np.empty(cap, dtype=np.int32)
    hx_np = np.empty(cap, dtype=np.int32)
    cdef double[::1] hp = hp_np
    cdef cnp.int64_t[::1] hc = hc_np
    cdef cnp.int32_t[::1] hy = hy_np
    cdef cnp.int32_t[::1] hx = hx_np
    cdef Py_ssize_t size = 0, i, parent, child
    cdef long counter = 0
    cdef int y, x, yy, xx, j, lab
    cdef double pv
    cdef long cv
    cdef int ty, tx
    cdef int[8] dy = [-1, 1, 0, 0, -1, -1, 1, 1]
    cdef int[8] dx = [0, 0, -1, 1, -1, 1, -1, 1]

    for y in range(h):
        for x in range(w):
            if labels[y, x] != 0:
                size = _heap_push(hp, hc, hy, hx, size, pri[y, x], counter, y, x)
                counter += 1
    while size > 0:
        pv = hp[0]
        y = hy[0]
        x = hx[0]
        size = _heap_pop(hp, hc, hy, hx, size)
        lab = labels[y, x]
        for j in range(8):
            yy = y + dy[j]
            xx = x + dx[j]
            if 0 <= yy < h and 0 <= xx < w and m[yy, xx] != 0 and labels[yy, xx] == 0:
                labels[yy, xx] = lab
                size = _heap_push(hp, hc, hy, hx, size, pri[yy, xx], counter, yy, xx)
                counter += 1
    return labels_np


cdef Py_ssize_t _heap_push(double[::1] hp, cnp.int64_t[::1] hc,
                           cnp.int32_t[::1] hy, cnp.int32_t[::1] hx,
                           Py_ssize_t size, double p, long c, int y, int x):
    cdef Py_ssize_t i = size, parent
    hp[i] = p
    hc[i] = c
    hy[i] = y
    hx[i] = x
    while i > 0:
        parent = (i - 1) // 2
        if _heap_less(hp[i], hc[i], hp[parent], hc[parent]):
            hp[i], hp[parent] = hp[parent], hp[i]
            hc[i], hc[parent] = hc[parent], hc[i]
            hy[i], hy[parent] = hy[parent], hy[i]
            hx[i], hx[parent] = hx[parent], hx[i]
            i = parent
        else:
            break
    return size + 1


cdef Py_ssize_t _heap_pop(double[::1] hp, cnp.int64_t[::1] hc,
                          cnp.int32_t[::1] hy, cnp.int32_t[::1] hx,
                          Py_ssize_t size):
    cdef Py_ssize_t i = 0, child
    size -= 1
    hp[0] = hp[size]
    hc[0] = hc[size]
    hy[0] = hy[size]
    hx[0] = hx[size]
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        if child + 1 < size and _heap_less(hp[child + 1], hc[child + 1], hp[child], hc[child]):
            child += 1
        if _heap_less(hp[child], hc[child], hp[i], hc[i]):
            hp[i], hp[child] = hp[child], hp[i]
            hc[i], hc[child] = hc[child], hc[i]
            hy[i], hy[child] = hy[child], hy[i]
            hx[i], hx[child] = hx[child], hx[i]
            i = child
        else:
            break
    return size
