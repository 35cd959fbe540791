# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, fabs, ceil, floor, INFINITY

cnp.import_array()

cdef enum:
    MAX_SWEEPS = 50


cdef inline double cmag(double complex z) noexcept nogil:
    return sqrt(z.real * z.real + z.imag * z.imag)


cdef inline double complex conj(double complex z) noexcept nogil:
    return z.real - 1j * z.imag


cdef int _jacobi3(double complex[:, ::1] a, double complex[:, ::1] v) noexcept nogil:
    """In-place cyclic Jacobi on one Hermitian 3x3; returns sweeps used or -1."""
    cdef int sweep, p, q, r, i
    cdef double fro = 0.0, off, mag, theta, t, c, s
    cdef double complex ph, arp, arq, vip, viq
    for p in range(3):
        for q in range(3):
            fro += a[p, q].real * a[p, q].real + a[p, q].imag * a[p, q].imag
    fro = sqrt(fro)
    for p in range(3):
        for q in range(3):
            v[p, q] = 1.0 if p == q else 0.0
    for sweep in range(MAX_SWEEPS + 1):
        off = cmag(a[0, 1]) ** 2 + cmag(a[0, 2]) ** 2 + cmag(a[1, 2]) ** 2
        if sqrt(off) <= 1e-15 * fro:
            return sweep
        if sweep == MAX_SWEEPS:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                mag = cmag(a[p, q])
                if mag == 0.0:
                    continue
                r = 3 - p - q
                ph = a[p, q] / mag
                theta = (a[q, q].real - a[p, p].real) / (2.0 * mag)
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                arp = a[r, p]
                arq = a[r, q]
                a[r, p] = c * arp - s * conj(ph) * arq
                a[r, q] = s * arp + c * conj(ph) * arq
                a[p, r] = conj(a[r, p])
                a[q, r] = conj(a[r, q])
                a[p, p] = a[p, p].real - t * mag
                a[q, q] = a[q, q].real + t * mag
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(3):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * conj(ph) * viq
                    v[i, q] = s * vip + c * conj(ph) * viq
    return -1


def jacobi_eigh3(cnp.ndarray t, int threads=0):
    """Batched Jacobi on ``(N, 3, 3)`` Hermitian input.

    Returns unsorted ``(values (N, 3), vectors (N, 3, 3), sweeps (N,))``;
    ``sweeps < 0`` marks pixels that hit the iteration cap.
    """
    cdef double complex[:, :, ::1] a = np.array(t, dtype=np.complex128, order="C", copy=True)
    cdef Py_ssize_t n = a.shape[0], i
    vecs_arr = np.empty((n, 3, 3), dtype=np.complex128)
    sweeps_arr = np.empty(n, dtype=np.int32)
    cdef double complex[:, :, ::1] v = vecs_arr
    cdef int[::1] sw = sweeps_arr
    cdef int nthreads = threads if threads > 0 else 1
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        sw[i] = _jacobi3(a[i], v[i])
    arr = np.asarray(a)
    vals = np.ascontiguousarray(np.real(np.diagonal(arr, axis1=1, axis2=2)))
    return vals, vecs_arr, sweeps_arr


def slic_assign(double[:, :, ::1] field, double[::1] cy, double[::1] cx,
                double[:, ::1] cfeat, double s, double m):
    """Local assignment: every center scans pixels within +-s of itself."""
    cdef Py_ssize_t h = field.shape[0], w = field.shape[1], u = field.shape[2]
    cdef Py_ssize_t k, y, x, j, y0, y1, x0, x1
    cdef double ratio = m / s, dy, dx, ds, acc, d, dist
    labels_arr = np.full((h, w), -1, dtype=np.int32)
    best_arr = np.full((h, w), np.inf, dtype=np.float64)
    cdef int[:, ::1] labels = labels_arr
    cdef double[:, ::1] best = best_arr
    with nogil:
        for k in range(cy.shape[0]):
            y0 = <Py_ssize_t>ceil(cy[k] - s)
            y1 = <Py_ssize_t>floor(cy[k] + s)
            x0 = <Py_ssize_t>ceil(cx[k] - s)
            x1 = <Py_ssize_t>floor(cx[k] + s)
            if y0 < 0:
                y0 = 0
            if x0 < 0:
                x0 = 0
            if y1 > h - 1:
                y1 = h - 1
            if x1 > w - 1:
                x1 = w - 1
            for y in range(y0, y1 + 1):
                dy = y - cy[k]
                for x in range(x0, x1 + 1):
                    dx = x - cx[k]
                    ds = sqrt(dy * dy + dx * dx)
                    acc = 0.0
                    for j in range(u):
                        d = field[y, x, j] - cfeat[k, j]
                        acc = acc + d * d
                    dist = ratio * ds + sqrt(acc)
                    if dist < best[y, x]:
                        best[y, x] = dist
                        labels[y, x] = <int>k
    return labels_arr, best_arr


def connected_components(int[:, ::1] labels):
    """4-connected components numbered in raster order of their first pixel."""
    cdef Py_ssize_t h = labels.shape[0], w = labels.shape[1]
    cdef Py_ssize_t y, x, head, tail, cy, cx, pos
    cdef int lab, ncomp = 0
    comp_arr = np.full((h, w), -1, dtype=np.int32)
    queue_arr = np.empty(h * w, dtype=np.intp)
    cdef int[:, ::1] comp = comp_arr
    cdef Py_ssize_t[::1] queue = queue_arr
    with nogil:
        for y in range(h):
            for x in range(w):
                if comp[y, x] >= 0:
                    continue
                lab = labels[y, x]
                comp[y, x] = ncomp
                head = 0
                tail = 1
                queue[0] = y * w + x
                while head < tail:
                    pos = queue[head]
                    head += 1
                    cy = pos // w
                    cx = pos - cy * w
                    if cy > 0 and comp[cy - 1, cx] < 0 and labels[cy - 1, cx] == lab:
                        comp[cy - 1, cx] = ncomp
                        queue[tail] = pos - w
                        tail += 1
                    if cy < h - 1 and comp[cy + 1, cx] < 0 and labels[cy + 1, cx] == lab:
                        comp[cy + 1, cx] = ncomp
                        queue[tail] = pos + w
                        tail += 1
                    if cx > 0 and comp[cy, cx - 1] < 0 and labels[cy, cx - 1] == lab:
                        comp[cy, cx - 1] = ncomp
                        queue[tail] = pos - 1
                        tail += 1
                    if cx < w - 1 and comp[cy, cx + 1] < 0 and labels[cy, cx + 1] == lab:
                        comp[cy, cx + 1] = ncomp
                        queue[tail] = pos + 1
                        tail += 1
                ncomp += 1
    return comp_arr, ncomp
