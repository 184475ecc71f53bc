"""Compiled inner loops for the backward induction and path simulation.

Every kernel has a pure numpy counterpart elsewhere in the package; the
test suite checks the two against each other.
"""
import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def _posterior_mean_point(atoms, logw, ups, gam):
    best = -np.inf
    for i in range(atoms.shape[0]):
        e = logw[i] + atoms[i] * ups - 0.5 * atoms[i] * atoms[i] * gam
        if e > best:
            best = e
    num = 0.0
    den = 0.0
    for i in range(atoms.shape[0]):
        w = np.exp(logw[i] + atoms[i] * ups - 0.5 * atoms[i] * atoms[i] * gam - best)
        num += w * atoms[i]
        den += w
    return num / den


@nb.njit(cache=True, nogil=True)
def posterior_mean_1d(atoms, logw, ups, gam):
    """Posterior mean for a scalar parameter at each (ups[i], gam[i])."""
    out = np.empty(ups.shape[0])
    for i in range(ups.shape[0]):
        out[i] = _posterior_mean_point(atoms, logw, ups[i], gam[i])
    return out


@nb.njit(cache=True, nogil=True)
def _locate(x, lo, h, n):
    """Clamped cell index of ``x`` on a uniform axis."""
    if x <= lo:
        return 0, lo
    hi = lo + h * (n - 1)
    if x >= hi:
        return n - 2, hi
    i = int((x - lo) / h)
    if i > n - 2:
        i = n - 2
    return i, x


@nb.njit(cache=True, nogil=True)
def _weight(x, i, lo, h, signed_square):
    x0 = lo + h * i
    x1 = x0 + h
    if signed_square:
        p = x * abs(x)
        p0 = x0 * abs(x0)
        p1 = x1 * abs(x1)
        return (p - p0) / (p1 - p0)
    return (x - x0) / h


@nb.njit(cache=True, nogil=True)
def _interp3(table, ia, wa, iv, wv, ig, wg):
    c00 = table[ia, iv, ig] * (1 - wg) + table[ia, iv, ig + 1] * wg
    c01 = table[ia, iv + 1, ig] * (1 - wg) + table[ia, iv + 1, ig + 1] * wg
    c10 = table[ia + 1, iv, ig] * (1 - wg) + table[ia + 1, iv, ig + 1] * wg
    c11 = table[ia + 1, iv + 1, ig] * (1 - wg) + table[ia + 1, iv + 1, ig + 1] * wg
    c0 = c00 * (1 - wv) + c01 * wv
    c1 = c10 * (1 - wv) + c11 * wv
    return c0 * (1 - wa) + c1 * wa


@nb.njit(cache=True, nogil=True, parallel=True)
def bellman_slice(
    a_ax, v_ax, g_ax, signed_square, W, per_control_W, k_now, k_weight,
    B, S, G_nodes, atoms, logw, order, xi, omega, delta, substeps, out_v, out_i,
):
    """One backward-induction step over all nodes of a spatial grid.

    ``*_ax`` are ``(lo, step, count)`` triples. ``W`` has shape
    ``(n_w, na, nv, ng)``; with ``per_control_W`` it holds one continuation
    table per control. ``k_now`` (``(nu, na, nv, ng)``) is the left-endpoint
    running cost, weighted by ``k_weight * delta``. ``B`` and ``S`` hold
    ``b`` and ``sigma`` per ``(a node, control)``.
    """
    a_lo, a_h, na = a_ax[0], a_ax[1], int(a_ax[2])
    v_lo, v_h, nv = v_ax[0], v_ax[1], int(v_ax[2])
    g_lo, g_h, ng = g_ax[0], g_ax[1], int(g_ax[2])
    nq = xi.shape[0]
    sq = np.sqrt(delta)
    dsub = delta / substeps
    for ia in nb.prange(na):
        a0 = a_lo + a_h * ia
        for iv in range(nv):
            v0 = v_lo + v_h * iv
            for ig in range(ng):
                g0 = g_lo + g_h * ig
                best = np.inf
                best_j = -1
                for jj in range(order.shape[0]):
                    j = order[jj]
                    b = B[ia, j]
                    s = S[ia, j]
                    r2 = b * b / (s * s)
                    a1 = a0
                    v1 = v0
                    g1 = g0
                    for _ in range(substeps):
                        if substeps == 1:
                            G = G_nodes[iv, ig]
                        else:
                            G = _posterior_mean_point(atoms, logw, v1, g1)
                        a1 += G * b * dsub
                        v1 += r2 * G * dsub
                        g1 += r2 * dsub
                    ig_, gq = _locate(g1, g_lo, g_h, ng)
                    wg = _weight(gq, ig_, g_lo, g_h, False)
                    wi = j if per_control_W else 0
                    acc = 0.0
                    for q in range(nq):
                        aq = a1 + s * sq * xi[q]
                        vq = v1 + (b / s) * sq * xi[q]
                        ia_, aqc = _locate(aq, a_lo, a_h, na)
                        wa = _weight(aqc, ia_, a_lo, a_h, signed_square)
                        iv_, vqc = _locate(vq, v_lo, v_h, nv)
                        wv = _weight(vqc, iv_, v_lo, v_h, False)
                        acc += omega[q] * _interp3(W[wi], ia_, wa, iv_, wv, ig_, wg)
                    val = acc + k_weight * delta * k_now[j, ia, iv, ig]
                    if val < best:
                        best = val
                        best_j = j
                out_v[ia, iv, ig] = best
                out_i[ia, iv, ig] = best_j
