"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a loop-oriented version compiled with numba
``@njit`` and a vectorised pure-numpy version. Both produce identical
results; ``tests/test_kernels.py`` checks this and ``benchmarks/`` times them.

The numba path is used when numba imports and the environment variable
``PIGEONPOSE_DISABLE_NUMBA`` is unset or ``0``. Set it to ``1`` to force the
numpy path (useful for debugging or platforms without an LLVM toolchain).

Kernels
-------
label_components(fg, eight)
    Connected-component labels, dense ``1..K`` in raster discovery order.
dlt_batch(proj, uv, use)
    Batched homogeneous DLT solves. Returns ``(vectors, singular_values)``.
render_capsules(segments, radii, height, width)
    Rasterise a union of thick line segments.
iou_matrix(a, b)
    Pairwise IoU of ``(x0, y0, x1, y1)`` boxes.
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("PIGEONPOSE_DISABLE_NUMBA", "0").strip() in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------

def _label_loops(fg, eight):
    # Two-pass union-find. Provisional labels are created in raster order and
    # every union keeps the smaller root, so a component's root is the label
    # of its first pixel; compacting roots in increasing order therefore
    # yields raster discovery order.
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = np.zeros(h * w + 1, dtype=np.int32)
    nxt = 1
    for y in range(h):
        for x in range(w):
            if not fg[y, x]:
                continue
            m = 0
            for k in range(4):
                if k == 0:
                    yy, xx = y, x - 1
                elif k == 1:
                    yy, xx = y - 1, x
                elif k == 2:
                    if not eight:
                        continue
                    yy, xx = y - 1, x - 1
                else:
                    if not eight:
                        continue
                    yy, xx = y - 1, x + 1
                if yy < 0 or xx < 0 or xx >= w:
                    continue
                lab = labels[yy, xx]
                if lab == 0:
                    continue
                while parent[lab] != lab:
                    parent[lab] = parent[parent[lab]]
                    lab = parent[lab]
                if m == 0:
                    m = lab
                elif lab != m:
                    if lab < m:
                        parent[m] = lab
                        m = lab
                    else:
                        parent[lab] = m
            if m == 0:
                parent[nxt] = nxt
                labels[y, x] = nxt
                nxt += 1
            else:
                labels[y, x] = m
    remap = np.zeros(nxt, dtype=np.int32)
    count = 0
    for lab in range(1, nxt):
        root = lab
        while parent[root] != root:
            root = parent[root]
        if root == lab:
            count += 1
            remap[lab] = count
        else:
            remap[lab] = remap[root]
    for y in range(h):
        for x in range(w):
            labels[y, x] = remap[labels[y, x]]
    return labels


def _label_numpy(fg, eight):
    # Min-label propagation with pointer jumping. Every pixel starts with its
    # own 1-based raster index; at convergence each component carries the
    # index of its first pixel, which fixes discovery order.
    fg = np.asarray(fg, dtype=bool)
    h, w = fg.shape
    if not fg.any():
        return np.zeros((h, w), dtype=np.int32)
    big = h * w + 1
    lab = np.where(fg, np.arange(1, h * w + 1, dtype=np.int64).reshape(h, w), big)
    if eight:
        shifts = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    else:
        shifts = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    while True:
        padded = np.pad(lab, 1, constant_values=big)
        new = lab.copy()
        for dy, dx in shifts:
            np.minimum(new, padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w], out=new)
        new = np.where(fg, new, big)
        # pointer jumping: the pixel at index l-1 belongs to the same component
        while True:
            flat = np.append(new.ravel(), big)
            jumped = np.where(fg, flat[new - 1], big)
            if np.array_equal(jumped, new):
                break
            new = jumped
        if np.array_equal(new, lab):
            break
        lab = new
    roots, inverse = np.unique(lab[fg], return_inverse=True)
    out = np.zeros((h, w), dtype=np.int32)
    out[fg] = inverse.astype(np.int32) + 1
    return out


# ---------------------------------------------------------------------------
# batched DLT
# ---------------------------------------------------------------------------

def _dlt_loops(proj, uv, use):
    m_rows, n_views = use.shape
    vecs = np.zeros((m_rows, 4))
    svals = np.zeros((m_rows, 4))
    for m in range(m_rows):
        n = 0
        for v in range(n_views):
            if use[m, v]:
                n += 1
        if n < 2:
            vecs[m, :] = np.nan
            svals[m, :] = np.nan
            continue
        a = np.empty((2 * n, 4))
        r = 0
        for v in range(n_views):
            if not use[m, v]:
                continue
            for c in range(4):
                a[r, c] = uv[m, v, 0] * proj[v, 2, c] - proj[v, 0, c]
                a[r + 1, c] = uv[m, v, 1] * proj[v, 2, c] - proj[v, 1, c]
            r += 2
        _, s, vh = np.linalg.svd(a)
        vecs[m, :] = vh[3, :]
        svals[m, :] = s[:4]
    return vecs, svals


def _dlt_numpy(proj, uv, use):
    m_rows, n_views = use.shape
    vecs = np.full((m_rows, 4), np.nan)
    svals = np.full((m_rows, 4), np.nan)
    ok = use.sum(axis=1) >= 2
    if not ok.any():
        return vecs, svals
    uv_ok = uv[ok]
    w = use[ok].astype(np.float64)[:, :, None]
    # zero rows for unused views leave the right singular vectors unchanged
    row_u = (uv_ok[:, :, 0:1] * proj[None, :, 2, :] - proj[None, :, 0, :]) * w
    row_v = (uv_ok[:, :, 1:2] * proj[None, :, 2, :] - proj[None, :, 1, :]) * w
    a = np.stack([row_u, row_v], axis=2).reshape(uv_ok.shape[0], 2 * n_views, 4)
    if 2 * n_views < 4:  # pragma: no cover - guarded by the >= 2 views rule
        a = np.concatenate([a, np.zeros((a.shape[0], 4 - 2 * n_views, 4))], axis=1)
    _, s, vh = np.linalg.svd(a, full_matrices=False)
    vecs[ok] = vh[:, 3, :]
    svals[ok] = s[:, :4]
    return vecs, svals


# ---------------------------------------------------------------------------
# capsule rasterisation
# ---------------------------------------------------------------------------

def _capsules_loops(segments, radii, height, width):
    out = np.zeros((height, width), dtype=np.bool_)
    for i in range(segments.shape[0]):
        x0, y0, x1, y1 = segments[i, 0], segments[i, 1], segments[i, 2], segments[i, 3]
        r = radii[i]
        if not (r > 0.0):
            continue
        lo_x = max(int(np.floor(min(x0, x1) - r)), 0)
        hi_x = min(int(np.ceil(max(x0, x1) + r)), width - 1)
        lo_y = max(int(np.floor(min(y0, y1) - r)), 0)
        hi_y = min(int(np.ceil(max(y0, y1) + r)), height - 1)
        dx = x1 - x0
        dy = y1 - y0
        len2 = dx * dx + dy * dy
        r2 = r * r
        for y in range(lo_y, hi_y + 1):
            for x in range(lo_x, hi_x + 1):
                px = x - x0
                py = y - y0
                t = 0.0
                if len2 > 0.0:
                    t = (px * dx + py * dy) / len2
                    t = min(max(t, 0.0), 1.0)
                ex = px - t * dx
                ey = py - t * dy
                if ex * ex + ey * ey <= r2:
                    out[y, x] = True
    return out


def _capsules_numpy(segments, radii, height, width):
    out = np.zeros((height, width), dtype=bool)
    for (x0, y0, x1, y1), r in zip(segments, radii):
        if not (r > 0.0):
            continue
        lo_x = max(int(np.floor(min(x0, x1) - r)), 0)
        hi_x = min(int(np.ceil(max(x0, x1) + r)), width - 1)
        lo_y = max(int(np.floor(min(y0, y1) - r)), 0)
        hi_y = min(int(np.ceil(max(y0, y1) + r)), height - 1)
        if lo_x > hi_x or lo_y > hi_y:
            continue
        px = np.arange(lo_x, hi_x + 1, dtype=np.float64)[None, :] - x0
        py = np.arange(lo_y, hi_y + 1, dtype=np.float64)[:, None] - y0
        dx = x1 - x0
        dy = y1 - y0
        len2 = dx * dx + dy * dy
        if len2 > 0.0:
            t = np.clip((px * dx + py * dy) / len2, 0.0, 1.0)
        else:
            t = np.zeros((py.shape[0], px.shape[1]))
        ex = px - t * dx
        ey = py - t * dy
        out[lo_y:hi_y + 1, lo_x:hi_x + 1] |= ex * ex + ey * ey <= r * r
    return out


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------

def _iou_loops(a, b):
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(b.shape[0]):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            out[i, j] = inter / (area_a + area_b - inter)
    return out


def _iou_numpy(a, b):
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    hit = (iw > 0.0) & (ih > 0.0)
    inter = np.where(hit, iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(hit, inter / np.where(hit, union, 1.0), 0.0)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

NUMPY_KERNELS = {
    "label_components": _label_numpy,
    "dlt_batch": _dlt_numpy,
    "render_capsules": _capsules_numpy,
    "iou_matrix": _iou_numpy,
}

if HAS_NUMBA:
    NUMBA_KERNELS = {
        "label_components": njit(cache=True)(_label_loops),
        "dlt_batch": njit(cache=True)(_dlt_loops),
        "render_capsules": njit(cache=True)(_capsules_loops),
        "iou_matrix": njit(cache=True)(_iou_loops),
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}


def get_kernels(backend=None):
    """Return the kernel table for ``backend`` (``"numba"``, ``"numpy"`` or default)."""
    backend = backend or BACKEND
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return NUMBA_KERNELS
    if backend == "numpy":
        return NUMPY_KERNELS
    raise ValueError(f"unknown backend {backend!r}")


def _coerce_label_input(fg):
    return np.ascontiguousarray(fg, dtype=np.bool_)


def label_components(fg, eight=True, backend=None):
    return get_kernels(backend)["label_components"](_coerce_label_input(fg), bool(eight))


def dlt_batch(proj, uv, use, backend=None):
    return get_kernels(backend)["dlt_batch"](
        np.ascontiguousarray(proj, dtype=np.float64),
        np.ascontiguousarray(uv, dtype=np.float64),
        np.ascontiguousarray(use, dtype=np.bool_),
    )


def render_capsules(segments, radii, height, width, backend=None):
    segments = np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4)
    radii = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)
    return get_kernels(backend)["render_capsules"](segments, radii, int(height), int(width))


def iou_matrix(a, b, backend=None):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return get_kernels(backend)["iou_matrix"](a, b)
