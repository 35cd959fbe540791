"""Pure numpy/Python versions of the compiled kernels.

Each function follows the same algorithm and floating-point operation order as
its counterpart in ``_ckernels.pyx`` so both backends agree on test fixtures.
"""
from collections import deque
import math

import numpy as np

MAX_SWEEPS = 50


def jacobi_eigh3(t, threads=0):
    a = np.array(t, dtype=np.complex128, order="C", copy=True)
    n = a.shape[0]
    v = np.zeros((n, 3, 3), dtype=np.complex128)
    v[:, 0, 0] = v[:, 1, 1] = v[:, 2, 2] = 1.0
    fro = np.sqrt(np.sum(a.real * a.real + a.imag * a.imag, axis=(1, 2)))
    sweeps = np.full(n, -1, dtype=np.int32)
    active = np.arange(n)
    for sweep in range(MAX_SWEEPS + 1):
        sub = a[active]
        off = np.abs(sub[:, 0, 1]) ** 2 + np.abs(sub[:, 0, 2]) ** 2 + np.abs(sub[:, 1, 2]) ** 2
        done = np.sqrt(off) <= 1e-15 * fro[active]
        sweeps[active[done]] = sweep
        active = active[~done]
        if active.size == 0 or sweep == MAX_SWEEPS:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            _rotate(a, v, active, p, q)
    return np.ascontiguousarray(np.real(np.diagonal(a, axis1=1, axis2=2))), v, sweeps


def _rotate(a, v, idx, p, q):
    apq = a[idx, p, q]
    mag = np.sqrt(apq.real * apq.real + apq.imag * apq.imag)
    live = mag != 0.0
    idx, apq, mag = idx[live], apq[live], mag[live]
    if idx.size == 0:
        return
    r = 3 - p - q
    ph = apq / mag
    theta = (a[idx, q, q].real - a[idx, p, p].real) / (2.0 * mag)
    with np.errstate(over="ignore"):
        t = 1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
    t = np.where(theta < 0, -t, t)
    big = np.abs(theta) > 1e150
    if big.any():
        t[big] = 0.5 / theta[big]
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    cph = np.conj(ph)
    arp = a[idx, r, p]
    arq = a[idx, r, q]
    a[idx, r, p] = c * arp - s * cph * arq
    a[idx, r, q] = s * arp + c * cph * arq
    a[idx, p, r] = np.conj(a[idx, r, p])
    a[idx, q, r] = np.conj(a[idx, r, q])
    a[idx, p, p] = a[idx, p, p].real - t * mag
    a[idx, q, q] = a[idx, q, q].real + t * mag
    a[idx, p, q] = 0.0
    a[idx, q, p] = 0.0
    vip = v[idx, :, p]
    viq = v[idx, :, q]
    v[idx, :, p] = c[:, None] * vip - (s * cph)[:, None] * viq
    v[idx, :, q] = s[:, None] * vip + (c * cph)[:, None] * viq


def slic_assign(field, cy, cx, cfeat, s, m):
    h, w, u = field.shape
    ratio = m / s
    labels = np.full((h, w), -1, dtype=np.int32)
    best = np.full((h, w), np.inf, dtype=np.float64)
    for k in range(len(cy)):
        y0 = max(int(math.ceil(cy[k] - s)), 0)
        y1 = min(int(math.floor(cy[k] + s)), h - 1)
        x0 = max(int(math.ceil(cx[k] - s)), 0)
        x1 = min(int(math.floor(cx[k] + s)), w - 1)
        if y1 < y0 or x1 < x0:
            continue
        dy = (np.arange(y0, y1 + 1) - cy[k])[:, None]
        dx = (np.arange(x0, x1 + 1) - cx[k])[None, :]
        ds = np.sqrt(dy * dy + dx * dx)
        acc = np.zeros_like(ds)
        win = field[y0:y1 + 1, x0:x1 + 1]
        for j in range(u):
            d = win[:, :, j] - cfeat[k, j]
            acc = acc + d * d
        dist = ratio * ds + np.sqrt(acc)
        bwin = best[y0:y1 + 1, x0:x1 + 1]
        better = dist < bwin
        bwin[better] = dist[better]
        labels[y0:y1 + 1, x0:x1 + 1][better] = k
    return labels, best


def connected_components(labels):
    lab = np.asarray(labels).tolist()
    h = len(lab)
    w = len(lab[0]) if h else 0
    comp = [[-1] * w for _ in range(h)]
    ncomp = 0
    for y in range(h):
        row = comp[y]
        for x in range(w):
            if row[x] >= 0:
                continue
            value = lab[y][x]
            row[x] = ncomp
            queue = deque([(y, x)])
            while queue:
                cy, cx = queue.popleft()
                for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                    if 0 <= ny < h and 0 <= nx < w and comp[ny][nx] < 0 and lab[ny][nx] == value:
                        comp[ny][nx] = ncomp
                        queue.append((ny, nx))
            ncomp += 1
    return np.array(comp, dtype=np.int32).reshape(h, w), ncomp
