"""Hot numerical kernels: facet-shell element matrices and grid rasterization.

Two implementations are provided for each kernel: a numba-compiled loop and a
vectorized pure-numpy fallback.  The active path is chosen at import time:
numba is used when importable unless the environment variable
``SHELLSTUDIO_NUMBA=0`` forces the numpy path.  Both paths produce matching
results; ``benchmarks/bench_kernels.py`` compares their throughput.

Element formulation: flat three-node facet combining a constant-strain
membrane with a discrete-Kirchhoff bending triangle, plus a small penalty tying
the in-plane (drilling) rotation to the local rotation of the displacement
field.  Local DOF order per node is [u, v, w, rx, ry, rz] in the element frame;
the rotation field of the bending part is beta_x = ry, beta_y = -rx.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAS_NUMBA = False

    def njit(*args, **kwargs):  # noqa: D103 - no-op decorator stand-in
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


USE_NUMBA = _HAS_NUMBA and os.environ.get("SHELLSTUDIO_NUMBA", "1") != "0"

# 3-point midside rule on the unit triangle: exact for quadratics, which makes
# both the bending stiffness and the drilling penalty integrals exact.
GAUSS_XI = np.array([0.5, 0.0, 0.5])
GAUSS_ETA = np.array([0.0, 0.5, 0.5])
GAUSS_W = np.array([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0])


# ---------------------------------------------------------------------------
# shared scalar geometry helpers (numba-compiled when available)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _local_frame(p1, p2, p3):
    """Orthonormal element frame with the normal's z-component non-negative.

    e1 is the in-plane projection of global x (global y when near-parallel to
    the normal), e2 completes the right-handed triad.
    """
    v1 = p2 - p1
    v2 = p3 - p1
    e3 = np.cross(v1, v2)
    n = np.sqrt(e3[0] ** 2 + e3[1] ** 2 + e3[2] ** 2)
    e3 = e3 / n
    if e3[2] < 0.0:
        e3 = -e3
    ref = np.zeros(3)
    if abs(e3[0]) < 0.99:
        ref[0] = 1.0
    else:
        ref[1] = 1.0
    e1 = ref - (ref[0] * e3[0] + ref[1] * e3[1] + ref[2] * e3[2]) * e3
    n1 = np.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
    e1 = e1 / n1
    e2 = np.cross(e3, e1)
    R = np.empty((3, 3))
    R[0] = e1
    R[1] = e2
    R[2] = e3
    return R


@njit(cache=True)
def _shape_derivs(xi, eta):
    """Quadratic shape function derivatives (N1..N6) w.r.t. xi and eta."""
    dnx = np.empty(6)
    dne = np.empty(6)
    dnx[0] = 4.0 * (xi + eta) - 3.0
    dnx[1] = 4.0 * xi - 1.0
    dnx[2] = 0.0
    dnx[3] = 4.0 * eta
    dnx[4] = -4.0 * eta
    dnx[5] = 4.0 * (1.0 - 2.0 * xi - eta)
    dne[0] = 4.0 * (xi + eta) - 3.0
    dne[1] = 0.0
    dne[2] = 4.0 * eta - 1.0
    dne[3] = 4.0 * xi
    dne[4] = 4.0 * (1.0 - xi - 2.0 * eta)
    dne[5] = -4.0 * xi
    return dnx, dne


@njit(cache=True)
def _bending_b(xl, yl, area2, xi, eta):
    """Curvature-displacement matrix (3x9) of the discrete-Kirchhoff triangle.

    DOF order [w1, rx1, ry1, w2, rx2, ry2, w3, rx3, ry3]; curvature vector is
    [k11, k22, 2*k12] so that the bending energy pairs with the moment vector
    produced by the same constitutive matrix pattern as the membrane.
    """
    # side quantities for sides 23, 31, 12 (index 0, 1, 2 here)
    xij = np.empty(3)
    yij = np.empty(3)
    xij[0] = xl[1] - xl[2]
    yij[0] = yl[1] - yl[2]
    xij[1] = xl[2] - xl[0]
    yij[1] = yl[2] - yl[0]
    xij[2] = xl[0] - xl[1]
    yij[2] = yl[0] - yl[1]
    a = np.empty(3)
    b = np.empty(3)
    c = np.empty(3)
    d = np.empty(3)
    e = np.empty(3)
    for k in range(3):
        l2 = xij[k] ** 2 + yij[k] ** 2
        a[k] = -xij[k] / l2
        b[k] = 0.75 * xij[k] * yij[k] / l2
        c[k] = (0.25 * xij[k] ** 2 - 0.5 * yij[k] ** 2) / l2
        d[k] = -yij[k] / l2
        e[k] = (0.25 * yij[k] ** 2 - 0.5 * xij[k] ** 2) / l2

    dnx, dne = _shape_derivs(xi, eta)

    hxx = np.empty(9)  # d(Hx)/dxi
    hxe = np.empty(9)  # d(Hx)/deta
    hyx = np.empty(9)  # d(Hy)/dxi
    hye = np.empty(9)  # d(Hy)/deta
    # index map: gauss-side k=0 -> N4 (mid 2-3), k=1 -> N5 (mid 3-1), k=2 -> N6 (mid 1-2)
    for dn, hx, hy in ((dnx, hxx, hyx), (dne, hxe, hye)):
        n1, n2, n3, n4, n5, n6 = dn[0], dn[1], dn[2], dn[3], dn[4], dn[5]
        hx[0] = 1.5 * (a[2] * n6 - a[1] * n5)
        hx[1] = b[1] * n5 + b[2] * n6
        hx[2] = n1 - c[1] * n5 - c[2] * n6
        hx[3] = 1.5 * (a[0] * n4 - a[2] * n6)
        hx[4] = b[2] * n6 + b[0] * n4
        hx[5] = n2 - c[2] * n6 - c[0] * n4
        hx[6] = 1.5 * (a[1] * n5 - a[0] * n4)
        hx[7] = b[0] * n4 + b[1] * n5
        hx[8] = n3 - c[0] * n4 - c[1] * n5
        hy[0] = 1.5 * (d[2] * n6 - d[1] * n5)
        hy[1] = -n1 + e[1] * n5 + e[2] * n6
        hy[2] = -b[1] * n5 - b[2] * n6
        hy[3] = 1.5 * (d[0] * n4 - d[2] * n6)
        hy[4] = -n2 + e[2] * n6 + e[0] * n4
        hy[5] = -b[2] * n6 - b[0] * n4
        hy[6] = 1.5 * (d[1] * n5 - d[0] * n4)
        hy[7] = -n3 + e[0] * n4 + e[1] * n5
        hy[8] = -b[0] * n4 - b[1] * n5

    x31 = xl[2] - xl[0]
    x12 = xl[0] - xl[1]
    y31 = yl[2] - yl[0]
    y12 = yl[0] - yl[1]
    B = np.empty((3, 9))
    for j in range(9):
        B[0, j] = (y31 * hxx[j] + y12 * hxe[j]) / area2
        B[1, j] = (-x31 * hyx[j] - x12 * hye[j]) / area2
        B[2, j] = (-x31 * hxx[j] - x12 * hxe[j] + y31 * hyx[j] + y12 * hye[j]) / area2
    return B


@njit(cache=True)
def _membrane_b(xl, yl, area2):
    """Constant-strain membrane matrix (3x6), DOF order [u1, v1, u2, v2, u3, v3]."""
    B = np.zeros((3, 6))
    y23 = yl[1] - yl[2]
    y31 = yl[2] - yl[0]
    y12 = yl[0] - yl[1]
    x32 = xl[2] - xl[1]
    x13 = xl[0] - xl[2]
    x21 = xl[1] - xl[0]
    B[0, 0] = y23
    B[0, 2] = y31
    B[0, 4] = y12
    B[1, 1] = x32
    B[1, 3] = x13
    B[1, 5] = x21
    B[2, 0] = x32
    B[2, 1] = y23
    B[2, 2] = x13
    B[2, 3] = y31
    B[2, 4] = x21
    B[2, 5] = y12
    return B / area2


@njit(cache=True)
def _drill_rows(xl, yl, area2):
    """Drilling strain rows (3 gauss points x 18 local DOFs).

    The drilling strain is rz(xi) - 0.5*(dv/dx - du/dy); it vanishes on rigid
    in-plane rotation and ties the rz DOFs to the membrane field elsewhere.
    """
    y23 = yl[1] - yl[2]
    y31 = yl[2] - yl[0]
    y12 = yl[0] - yl[1]
    x32 = xl[2] - xl[1]
    x13 = xl[0] - xl[2]
    x21 = xl[1] - xl[0]
    bb = np.empty(3)
    cc = np.empty(3)
    bb[0] = y23 / area2
    bb[1] = y31 / area2
    bb[2] = y12 / area2
    cc[0] = x32 / area2
    cc[1] = x13 / area2
    cc[2] = x21 / area2
    rows = np.zeros((3, 18))
    for g in range(3):
        xi = GAUSS_XI[g]
        eta = GAUSS_ETA[g]
        L = np.empty(3)
        L[0] = 1.0 - xi - eta
        L[1] = xi
        L[2] = eta
        for i in range(3):
            rows[g, 6 * i + 0] = 0.5 * cc[i]
            rows[g, 6 * i + 1] = -0.5 * bb[i]
            rows[g, 6 * i + 5] = L[i]
    return rows


@njit(cache=True)
def _element_stiffness_one(p1, p2, p3, a_mat, d_mat, drill_k):
    """Local 18x18 stiffness, frame, area, and local xy coordinates of one facet."""
    R = _local_frame(p1, p2, p3)
    xl = np.empty(3)
    yl = np.empty(3)
    for i in range(3):
        p = p1 if i == 0 else (p2 if i == 1 else p3)
        dx = p - p1
        xl[i] = R[0, 0] * dx[0] + R[0, 1] * dx[1] + R[0, 2] * dx[2]
        yl[i] = R[1, 0] * dx[0] + R[1, 1] * dx[1] + R[1, 2] * dx[2]
    area2 = (xl[1] - xl[0]) * (yl[2] - yl[0]) - (xl[2] - xl[0]) * (yl[1] - yl[0])
    area = 0.5 * area2

    k = np.zeros((18, 18))

    # membrane: constant strain, closed-form integral A * Bm^T (a_mat) Bm
    bm = _membrane_b(xl, yl, area2)
    km = area * (bm.T @ a_mat @ bm)
    mdof = np.array([0, 1, 6, 7, 12, 13])
    for i in range(6):
        for j in range(6):
            k[mdof[i], mdof[j]] += km[i, j]

    # bending: 3-point rule, exact for the linear curvature field
    bdof = np.array([2, 3, 4, 8, 9, 10, 14, 15, 16])
    for g in range(3):
        B = _bending_b(xl, yl, area2, GAUSS_XI[g], GAUSS_ETA[g])
        kb = (2.0 * area * GAUSS_W[g]) * (B.T @ d_mat @ B)
        for i in range(9):
            for j in range(9):
                k[bdof[i], bdof[j]] += kb[i, j]

    # drilling penalty
    rows = _drill_rows(xl, yl, area2)
    for g in range(3):
        w = drill_k * 2.0 * area * GAUSS_W[g]
        r = rows[g]
        for i in range(18):
            if r[i] == 0.0:
                continue
            for j in range(18):
                k[i, j] += w * r[i] * r[j]
    return k, R, area, xl, yl


@njit(cache=True)
def _element_stiffness_batch_numba(nodes, tris, a_mat, d_mat, drill_k):
    ne = tris.shape[0]
    ke = np.zeros((ne, 18, 18))
    frames = np.zeros((ne, 3, 3))
    areas = np.zeros(ne)
    for e in range(ne):
        p1 = nodes[tris[e, 0]]
        p2 = nodes[tris[e, 1]]
        p3 = nodes[tris[e, 2]]
        kl, R, area, _, _ = _element_stiffness_one(p1, p2, p3, a_mat, d_mat, drill_k)
        areas[e] = area
        frames[e] = R
        # K_global = T^T K_local T with T = blkdiag(R x 6)
        T = np.zeros((18, 18))
        for blk in range(6):
            for i in range(3):
                for j in range(3):
                    T[3 * blk + i, 3 * blk + j] = R[i, j]
        ke[e] = T.T @ kl @ T
    return ke, frames, areas


# ---------------------------------------------------------------------------
# vectorized numpy fallback
# ---------------------------------------------------------------------------


def _frames_numpy(nodes: np.ndarray, tris: np.ndarray):
    """Frames, signed areas, and local node coordinates for all facets at once."""
    p = nodes[tris]  # (ne, 3, 3)
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    e3 = np.cross(v1, v2)
    e3 /= np.linalg.norm(e3, axis=1, keepdims=True)
    flip = e3[:, 2] < 0.0
    e3[flip] = -e3[flip]
    ref = np.zeros_like(e3)
    use_x = np.abs(e3[:, 0]) < 0.99
    ref[use_x, 0] = 1.0
    ref[~use_x, 1] = 1.0
    e1 = ref - np.sum(ref * e3, axis=1, keepdims=True) * e3
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(e3, e1)
    R = np.stack([e1, e2, e3], axis=1)  # (ne, 3, 3) rows are axes
    d = p - p[:, :1]
    xl = np.einsum("nj,nij->ni", R[:, 0], d)
    yl = np.einsum("nj,nij->ni", R[:, 1], d)
    area2 = (xl[:, 1] - xl[:, 0]) * (yl[:, 2] - yl[:, 0]) - (
        xl[:, 2] - xl[:, 0]) * (yl[:, 1] - yl[:, 0])
    return R, xl, yl, area2


def _membrane_b_numpy(xl, yl, area2):
    ne = xl.shape[0]
    B = np.zeros((ne, 3, 6))
    y23 = yl[:, 1] - yl[:, 2]
    y31 = yl[:, 2] - yl[:, 0]
    y12 = yl[:, 0] - yl[:, 1]
    x32 = xl[:, 2] - xl[:, 1]
    x13 = xl[:, 0] - xl[:, 2]
    x21 = xl[:, 1] - xl[:, 0]
    B[:, 0, 0] = y23
    B[:, 0, 2] = y31
    B[:, 0, 4] = y12
    B[:, 1, 1] = x32
    B[:, 1, 3] = x13
    B[:, 1, 5] = x21
    B[:, 2, 0] = x32
    B[:, 2, 1] = y23
    B[:, 2, 2] = x13
    B[:, 2, 3] = y31
    B[:, 2, 4] = x21
    B[:, 2, 5] = y12
    return B / area2[:, None, None]


def _shape_derivs_all():
    """Shape derivatives at the 3 gauss points, shape (2, 3, 6)."""
    out = np.zeros((2, 3, 6))
    for g, (xi, eta) in enumerate(zip(GAUSS_XI, GAUSS_ETA)):
        out[0, g] = [4 * (xi + eta) - 3, 4 * xi - 1, 0.0, 4 * eta, -4 * eta,
                     4 * (1 - 2 * xi - eta)]
        out[1, g] = [4 * (xi + eta) - 3, 0.0, 4 * eta - 1, 4 * xi,
                     4 * (1 - xi - 2 * eta), -4 * xi]
    return out


_DN = _shape_derivs_all()


def _bending_b_numpy(xl, yl, area2):
    """Bending B at the 3 gauss points for all elements, shape (ne, 3, 3, 9)."""
    ne = xl.shape[0]
    xij = np.stack([xl[:, 1] - xl[:, 2], xl[:, 2] - xl[:, 0], xl[:, 0] - xl[:, 1]], axis=1)
    yij = np.stack([yl[:, 1] - yl[:, 2], yl[:, 2] - yl[:, 0], yl[:, 0] - yl[:, 1]], axis=1)
    l2 = xij ** 2 + yij ** 2
    a = -xij / l2
    b = 0.75 * xij * yij / l2
    c = (0.25 * xij ** 2 - 0.5 * yij ** 2) / l2
    d = -yij / l2
    e = (0.25 * yij ** 2 - 0.5 * xij ** 2) / l2

    def h_derivs(dn):
        # dn: (3gp, 6); returns hx, hy of shape (ne, 3gp, 9)
        n1, n2, n3 = dn[:, 0], dn[:, 1], dn[:, 2]
        n4, n5, n6 = dn[:, 3], dn[:, 4], dn[:, 5]
        one = np.ones((ne, dn.shape[0]))
        hx = np.stack([
            1.5 * (a[:, 2:3] * n6 - a[:, 1:2] * n5),
            b[:, 1:2] * n5 + b[:, 2:3] * n6,
            one * n1 - c[:, 1:2] * n5 - c[:, 2:3] * n6,
            1.5 * (a[:, 0:1] * n4 - a[:, 2:3] * n6),
            b[:, 2:3] * n6 + b[:, 0:1] * n4,
            one * n2 - c[:, 2:3] * n6 - c[:, 0:1] * n4,
            1.5 * (a[:, 1:2] * n5 - a[:, 0:1] * n4),
            b[:, 0:1] * n4 + b[:, 1:2] * n5,
            one * n3 - c[:, 0:1] * n4 - c[:, 1:2] * n5,
        ], axis=2)
        hy = np.stack([
            1.5 * (d[:, 2:3] * n6 - d[:, 1:2] * n5),
            -one * n1 + e[:, 1:2] * n5 + e[:, 2:3] * n6,
            -b[:, 1:2] * n5 - b[:, 2:3] * n6,
            1.5 * (d[:, 0:1] * n4 - d[:, 2:3] * n6),
            -one * n2 + e[:, 2:3] * n6 + e[:, 0:1] * n4,
            -b[:, 2:3] * n6 - b[:, 0:1] * n4,
            1.5 * (d[:, 1:2] * n5 - d[:, 0:1] * n4),
            -one * n3 + e[:, 0:1] * n4 + e[:, 1:2] * n5,
            -b[:, 0:1] * n4 - b[:, 1:2] * n5,
        ], axis=2)
        return hx, hy

    hxx, hyx = h_derivs(_DN[0])
    hxe, hye = h_derivs(_DN[1])

    x31 = (xl[:, 2] - xl[:, 0])[:, None, None]
    x12 = (xl[:, 0] - xl[:, 1])[:, None, None]
    y31 = (yl[:, 2] - yl[:, 0])[:, None, None]
    y12 = (yl[:, 0] - yl[:, 1])[:, None, None]
    row0 = y31 * hxx + y12 * hxe
    row1 = -x31 * hyx - x12 * hye
    row2 = -x31 * hxx - x12 * hxe + y31 * hyx + y12 * hye
    B = np.stack([row0, row1, row2], axis=2)  # (ne, 3gp, 3, 9)
    return B / area2[:, None, None, None]


def _drill_rows_numpy(xl, yl, area2):
    ne = xl.shape[0]
    y23 = yl[:, 1] - yl[:, 2]
    y31 = yl[:, 2] - yl[:, 0]
    y12 = yl[:, 0] - yl[:, 1]
    x32 = xl[:, 2] - xl[:, 1]
    x13 = xl[:, 0] - xl[:, 2]
    x21 = xl[:, 1] - xl[:, 0]
    bb = np.stack([y23, y31, y12], axis=1) / area2[:, None]
    cc = np.stack([x32, x13, x21], axis=1) / area2[:, None]
    rows = np.zeros((ne, 3, 18))
    for g, (xi, eta) in enumerate(zip(GAUSS_XI, GAUSS_ETA)):
        L = (1.0 - xi - eta, xi, eta)
        for i in range(3):
            rows[:, g, 6 * i + 0] = 0.5 * cc[:, i]
            rows[:, g, 6 * i + 1] = -0.5 * bb[:, i]
            rows[:, g, 6 * i + 5] = L[i]
    return rows


_MDOF = np.array([0, 1, 6, 7, 12, 13])
_BDOF = np.array([2, 3, 4, 8, 9, 10, 14, 15, 16])


def _element_stiffness_batch_numpy(nodes, tris, a_mat, d_mat, drill_k):
    R, xl, yl, area2 = _frames_numpy(nodes, tris)
    area = 0.5 * area2
    ne = tris.shape[0]
    k = np.zeros((ne, 18, 18))

    bm = _membrane_b_numpy(xl, yl, area2)
    km = area[:, None, None] * np.einsum("nji,jk,nkl->nil", bm, a_mat, bm)
    k[np.ix_(np.arange(ne), _MDOF, _MDOF)] += km

    bb = _bending_b_numpy(xl, yl, area2)  # (ne, 3, 3, 9)
    w = (2.0 * area)[:, None] * GAUSS_W[None, :]
    kb = np.einsum("ng,ngji,jk,ngkl->nil", w, bb, d_mat, bb)
    k[np.ix_(np.arange(ne), _BDOF, _BDOF)] += kb

    rows = _drill_rows_numpy(xl, yl, area2)
    wd = drill_k * (2.0 * area)[:, None] * GAUSS_W[None, :]
    k += np.einsum("ng,ngi,ngj->nij", wd, rows, rows)

    T = np.zeros((ne, 18, 18))
    for blk in range(6):
        T[:, 3 * blk:3 * blk + 3, 3 * blk:3 * blk + 3] = R
    ke = np.einsum("nji,njk,nkl->nil", T, k, T)
    return ke, R, area


def element_stiffness_batch(nodes: np.ndarray, tris: np.ndarray,
                            a_mat: np.ndarray, d_mat: np.ndarray,
                            drill_k: float, use_numba: bool | None = None):
    """Global-frame 18x18 stiffness matrices for all facets.

    Parameters
    ----------
    nodes : (nn, 3) float64
    tris : (ne, 3) int64
        Node indices wound counter-clockwise in xy projection.
    a_mat, d_mat : (3, 3)
        Membrane and bending constitutive matrices on the engineering basis.
    drill_k : float
        Drilling penalty stiffness per unit area.

    Returns
    -------
    ke : (ne, 18, 18), frames : (ne, 3, 3), areas : (ne,)
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.int64)
    if use_numba:
        return _element_stiffness_batch_numba(nodes, tris, a_mat, d_mat, drill_k)
    return _element_stiffness_batch_numpy(nodes, tris, a_mat, d_mat, drill_k)


def recover_element_fields(nodes: np.ndarray, tris: np.ndarray, u: np.ndarray,
                           a_mat: np.ndarray, d_mat: np.ndarray, drill_k: float):
    """Per-element strains, resultants, and exact element work integrals.

    Parameters
    ----------
    u : (nn, 6) float64
        Global nodal solution [ux, uy, uz, rx, ry, rz].

    Returns
    -------
    eps_m : (ne, 3)
        Membrane strain [e11, e22, g12] (engineering shear).
    f_res : (ne, 3)
        Stress resultants [F11, F22, F12] (tensor shear entry).
    kappa : (ne, 3)
        Centroid curvature [k11, k22, 2*k12] (engineering twist).
    m_res : (ne, 3)
        Bending moments [M11, M22, M12] (tensor twist entry).
    w_memb_e, w_flex_e : (ne,)
        Element internal work integrals consistent with the assembled
        stiffness (membrane includes the drilling penalty energy).
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.int64)
    R, xl, yl, area2 = _frames_numpy(nodes, tris)
    area = 0.5 * area2
    ne = tris.shape[0]

    ue = u[tris].reshape(ne, 18)  # (ne, 3 nodes, 6) -> rows [node][dof]
    T = np.zeros((ne, 18, 18))
    for blk in range(6):
        T[:, 3 * blk:3 * blk + 3, 3 * blk:3 * blk + 3] = R
    ul = np.einsum("nij,nj->ni", T, ue)

    bm = _membrane_b_numpy(xl, yl, area2)
    eps_m = np.einsum("nij,nj->ni", bm, ul[:, _MDOF])
    f_res = eps_m @ a_mat.T

    bb = _bending_b_numpy(xl, yl, area2)
    kap_g = np.einsum("ngij,nj->ngi", bb, ul[:, _BDOF])  # per gauss point
    kappa = kap_g.mean(axis=1)  # B is linear, so the mean is the centroid value
    m_res = kappa @ d_mat.T

    w_memb_e = area * np.einsum("ni,ni->n", f_res, eps_m)
    mom_g = np.einsum("ngi,ij->ngj", kap_g, d_mat.T)
    w_flex_e = (2.0 * area) * np.einsum("ngi,ngi,g->n", mom_g, kap_g, GAUSS_W)

    rows = _drill_rows_numpy(xl, yl, area2)
    s = np.einsum("ngi,ni->ng", rows, ul)
    w_drill = drill_k * (2.0 * area) * np.einsum("ng,ng,g->n", s, s, GAUSS_W)
    w_memb_e = w_memb_e + w_drill
    return eps_m, f_res, kappa, m_res, w_memb_e, w_flex_e


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


@njit(cache=True)
def _rasterize_numba(xy, tris, values, xs, ys, out, cover):
    ne = tris.shape[0]
    nch = values.shape[1]
    nx = xs.shape[0]
    ny = ys.shape[0]
    sx = xs[1] - xs[0] if nx > 1 else 1.0
    sy = ys[1] - ys[0] if ny > 1 else 1.0
    tol = -1e-9
    for e in range(ne):
        i1, i2, i3 = tris[e, 0], tris[e, 1], tris[e, 2]
        x1, y1 = xy[i1, 0], xy[i1, 1]
        x2, y2 = xy[i2, 0], xy[i2, 1]
        x3, y3 = xy[i3, 0], xy[i3, 1]
        xmin = min(x1, min(x2, x3))
        xmax = max(x1, max(x2, x3))
        ymin = min(y1, min(y2, y3))
        ymax = max(y1, max(y2, y3))
        ia = max(0, int(np.ceil((xmin - xs[0]) / sx - 1e-12)))
        ib = min(nx - 1, int(np.floor((xmax - xs[0]) / sx + 1e-12)))
        ja = max(0, int(np.ceil((ymin - ys[0]) / sy - 1e-12)))
        jb = min(ny - 1, int(np.floor((ymax - ys[0]) / sy + 1e-12)))
        den = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
        if den == 0.0:
            continue
        for i in range(ia, ib + 1):
            px = xs[i]
            for j in range(ja, jb + 1):
                if cover[i, j]:
                    continue
                py = ys[j]
                l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / den
                if l1 < tol or l1 > 1.0 - tol:
                    continue
                l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / den
                if l2 < tol:
                    continue
                l3 = 1.0 - l1 - l2
                if l3 < tol:
                    continue
                cover[i, j] = True
                for c in range(nch):
                    out[c, i, j] = (l1 * values[i1, c] + l2 * values[i2, c]
                                    + l3 * values[i3, c])


def _rasterize_numpy(xy, tris, values, xs, ys, out, cover):
    nx, ny = xs.shape[0], ys.shape[0]
    sx = xs[1] - xs[0] if nx > 1 else 1.0
    sy = ys[1] - ys[0] if ny > 1 else 1.0
    tol = -1e-9
    for e in range(tris.shape[0]):
        i1, i2, i3 = tris[e]
        (x1, y1), (x2, y2), (x3, y3) = xy[i1], xy[i2], xy[i3]
        ia = max(0, int(np.ceil((min(x1, x2, x3) - xs[0]) / sx - 1e-12)))
        ib = min(nx - 1, int(np.floor((max(x1, x2, x3) - xs[0]) / sx + 1e-12)))
        ja = max(0, int(np.ceil((min(y1, y2, y3) - ys[0]) / sy - 1e-12)))
        jb = min(ny - 1, int(np.floor((max(y1, y2, y3) - ys[0]) / sy + 1e-12)))
        if ia > ib or ja > jb:
            continue
        den = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
        if den == 0.0:
            continue
        px = xs[ia:ib + 1][:, None]
        py = ys[ja:jb + 1][None, :]
        l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / den
        l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / den
        l3 = 1.0 - l1 - l2
        inside = (l1 >= tol) & (l2 >= tol) & (l3 >= tol)
        sub = cover[ia:ib + 1, ja:jb + 1]
        write = inside & ~sub
        if not write.any():
            continue
        vals = (l1[None] * values[i1][:, None, None]
                + l2[None] * values[i2][:, None, None]
                + l3[None] * values[i3][:, None, None])
        region = out[:, ia:ib + 1, ja:jb + 1]
        region[:, write] = vals[:, write]
        sub |= write


def rasterize_tri_mesh(xy: np.ndarray, tris: np.ndarray, values: np.ndarray,
                       xs: np.ndarray, ys: np.ndarray,
                       use_numba: bool | None = None):
    """Barycentric interpolation of nodal values onto cell centers.

    Cells whose centers fall outside every triangle keep value 0 and
    cover=False.  The first containing triangle in element order wins, which
    makes the result deterministic; values are continuous across shared edges.

    Parameters
    ----------
    xy : (nn, 2) node xy coordinates
    tris : (ne, 3) node indices
    values : (nn, nch) nodal channel values
    xs, ys : 1-D cell center coordinates (uniform spacing)

    Returns
    -------
    out : (nch, nx, ny) interpolated grids
    cover : (nx, ny) bool coverage mask
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    tris = np.ascontiguousarray(tris, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    out = np.zeros((values.shape[1], xs.shape[0], ys.shape[0]))
    cover = np.zeros((xs.shape[0], ys.shape[0]), dtype=bool)
    if use_numba:
        _rasterize_numba(xy, tris, values, xs, ys, out, cover)
    else:
        _rasterize_numpy(xy, tris, values, xs, ys, out, cover)
    return out, cover
