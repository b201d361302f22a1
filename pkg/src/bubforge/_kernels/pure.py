"""Numpy implementations of the kernel primitives.

These are the portable fallbacks for the compiled extension in
``_native.pyx``. Both backends must produce identical results: integer and
boolean kernels are exact, and the float kernels perform the same arithmetic
in the same order.
"""

from collections import deque

import numpy as np

_INF = float("inf")
# large finite sentinel for "no unset pixel reachable": with a true infinity
# the parabola-envelope intersection degenerates (inf - inf) and the pop
# loop can underflow its stack
EDT_FAR = 1e20


# ---------------------------------------------------------------------------
# convolution patch gather / scatter
# ---------------------------------------------------------------------------

def im2col(x, kh, kw, stride, pad):
    """Gather conv patches from NHWC input: (n,h,w,c) -> (n*oh*ow, kh*kw*c)."""
    n, h, w, c = x.shape
    if pad > 0:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (n, oh, ow, c, kh, kw)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)
    return np.ascontiguousarray(cols)


def col2im(cols, n, h, w, c, kh, kw, stride, pad):
    """Scatter-add NHWC conv patches back: inverse map of im2col."""
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    xp = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    cols6 = cols.reshape(n, oh, ow, kh, kw, c)
    for ky in range(kh):
        for kx in range(kw):
            xp[:, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride, :] += (
                cols6[:, :, :, ky, kx, :]
            )
    if pad > 0:
        xp = xp[:, pad:pad + h, pad:pad + w, :]
    return np.ascontiguousarray(xp)


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (two-pass parabola method)
# ---------------------------------------------------------------------------

def _dt1d(f):
    """1-D squared-distance transform via the lower envelope of parabolas."""
    n = f.shape[0]
    d = np.empty(n, dtype=np.float64)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    k = 0
    v[0] = 0
    z[0] = -_INF
    z[1] = _INF
    for q in range(1, n):
        while True:
            vk = v[k]
            s = ((f[q] + q * q) - (f[vk] + vk * vk)) / (2.0 * q - 2.0 * vk)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        vk = v[k]
        d[q] = (q - vk) * (q - vk) + f[vk]
    return d


def edt_sq(mask):
    """Exact squared Euclidean distance to the nearest unset pixel.

    Column pass is a vectorized nearest-zero scan (the 1-D transform of a
    0/inf field degenerates to it); the row pass runs the parabola envelope.
    """
    h, w = mask.shape
    m = mask.astype(bool)
    idx = np.arange(h, dtype=np.int64)[:, None]
    unset = ~m
    above = np.where(unset, idx, np.int64(-1))
    np.maximum.accumulate(above, axis=0, out=above)
    d_up = np.where(above >= 0, (idx - above).astype(np.float64) ** 2, EDT_FAR)
    below = np.where(unset, idx, np.int64(2 * h))
    below = np.minimum.accumulate(below[::-1], axis=0)[::-1]
    d_dn = np.where(below < 2 * h, (below - idx).astype(np.float64) ** 2, EDT_FAR)
    g = np.minimum(d_up, d_dn)
    g[unset] = 0.0
    out = np.empty((h, w), dtype=np.float64)
    for y in range(h):
        out[y, :] = _dt1d(g[y, :])
    return out


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------

_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_N8 = _N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def label_components(mask, connectivity):
    """Label maximal connected regions 1..n in raster-scan discovery order."""
    h, w = mask.shape
    m = mask.astype(bool)
    labels = np.zeros((h, w), dtype=np.int32)
    offs = _N8 if connectivity == 8 else _N4
    n = 0
    for y0 in range(h):
        for x0 in range(w):
            if not m[y0, x0] or labels[y0, x0]:
                continue
            n += 1
            q = deque([(y0, x0)])
            labels[y0, x0] = n
            while q:
                y, x = q.popleft()
                for dy, dx in offs:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and m[yy, xx] and not labels[yy, xx]:
                        labels[yy, xx] = n
                        q.append((yy, xx))
    return labels, n


# ---------------------------------------------------------------------------
# Zhang-Suen thinning
# ---------------------------------------------------------------------------

def thin(mask):
    """Two-subiteration thinning to a 1-px 8-connected skeleton."""
    h, w = mask.shape
    img = np.zeros((h + 2, w + 2), dtype=np.uint8)
    img[1:-1, 1:-1] = mask.astype(np.uint8)
    while True:
        changed = False
        for step in (0, 1):
            p2 = img[:-2, 1:-1]
            p3 = img[:-2, 2:]
            p4 = img[1:-1, 2:]
            p5 = img[2:, 2:]
            p6 = img[2:, 1:-1]
            p7 = img[2:, :-2]
            p8 = img[1:-1, :-2]
            p9 = img[:-2, :-2]
            ring = (p2, p3, p4, p5, p6, p7, p8, p9)
            b = sum(p.astype(np.int32) for p in ring)
            a = sum(
                ((ring[i] == 0) & (ring[(i + 1) % 8] == 1)).astype(np.int32)
                for i in range(8)
            )
            if step == 0:
                extra = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                extra = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            kill = (img[1:-1, 1:-1] == 1) & (b >= 2) & (b <= 6) & (a == 1) & extra
            if kill.any():
                img[1:-1, 1:-1][kill] = 0
                changed = True
        if not changed:
            break
    return img[1:-1, 1:-1].astype(bool)


# ---------------------------------------------------------------------------
# grayscale reconstruction by dilation (8-connected)
# ---------------------------------------------------------------------------

def reconstruct(marker, mask_img):
    """Morphological reconstruction of `marker` under `mask_img`.

    Iterated one-step 8-neighborhood dilations clipped by the mask image;
    converges to the unique fixpoint, so the (faster) scanning variant in
    the compiled backend yields the identical array.
    """
    cur = np.minimum(marker, mask_img).astype(np.float64)
    h, w = cur.shape
    pad = np.full((h + 2, w + 2), -_INF)
    while True:
        pad[1:-1, 1:-1] = cur
        dil = cur.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                np.maximum(dil, pad[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx], out=dil)
        nxt = np.minimum(dil, mask_img)
        if np.array_equal(nxt, cur):
            return cur
        cur = nxt


# ---------------------------------------------------------------------------
# marker-based watershed flooding
# ---------------------------------------------------------------------------

def watershed_flood(priority, mask, markers):
    """Flood `mask` from labeled `markers`, highest `priority` first.

    Ties resolve by insertion order (FIFO), which makes the flood fully
    deterministic for a given input.
    """
    import heapq

    h, w = priority.shape
    labels = markers.astype(np.int32).copy()
    m = mask.astype(bool)
    heap = []
    counter = 0
    ys, xs = np.nonzero(labels)
    for y, x in zip(ys.tolist(), xs.tolist()):
        heapq.heappush(heap, (-float(priority[y, x]), counter, y, x))
        counter += 1
    while heap:
        _, _, y, x = heapq.heappop(heap)
        lab = labels[y, x]
        for dy, dx in _N8:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and m[yy, xx] and labels[yy, xx] == 0:
                labels[yy, xx] = lab
                heapq.heappush(heap, (-float(priority[yy, xx]), counter, yy, xx))
                counter += 1
    return labels
