"""Limit-surface evaluation of Catmull-Clark patches and coordinate changes.

Regular faces are uniform bicubic B-spline patches. The face incident to an
extraordinary vertex is evaluated by explicit repeated local subdivision: the
``2v+8`` control points are refined until the query point falls into one of
the three regular children of the sub-face around the vertex. Faces that touch
the vertex's 1-ring (but not the vertex itself) are only bicubic after one
refinement step when the tuned weights differ from the classic ones, so they
are evaluated through one explicit step as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .stencils import (
    CHILD_CORNERS, EV_KEY, StencilRules, canon, child_grid, ev_patch_extended_keys,
    ev_patch_keys, ring_index, rotate_key,
)

LEVEL_MAX = 20


def bspline_1d(t, order=0):
    """Uniform cubic B-spline basis on one knot span, shape ``(order+1, 4)``."""
    t = float(t)
    s = 1.0 - t
    rows = [[s ** 3 / 6.0,
             (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0,
             (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0,
             t ** 3 / 6.0]]
    if order >= 1:
        rows.append([-s ** 2 / 2.0,
                     (3 * t ** 2 - 4 * t) / 2.0,
                     (-3 * t ** 2 + 2 * t + 1) / 2.0,
                     t ** 2 / 2.0])
    if order >= 2:
        rows.append([s, 3 * t - 2, -3 * t + 1, t])
    return np.array(rows)


def bspline_many(t, order=0):
    """Vectorised :func:`bspline_1d`: shape ``(order+1, len(t), 4)``."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    rows = [np.stack([s ** 3 / 6.0, (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0,
                      (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0, t ** 3 / 6.0], -1)]
    if order >= 1:
        rows.append(np.stack([-s ** 2 / 2.0, (3 * t ** 2 - 4 * t) / 2.0,
                              (-3 * t ** 2 + 2 * t + 1) / 2.0, t ** 2 / 2.0], -1))
    if order >= 2:
        rows.append(np.stack([s, 3 * t - 2, -3 * t + 1, t], -1))
    return np.array(rows)


def bicubic_many(etas, order=0):
    """Batched :func:`bicubic` for points of shape (P, 2): arrays (P,16), (P,2,16), (P,3,16)."""
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    u = bspline_many(etas[:, 0], order)
    w = bspline_many(etas[:, 1], order)

    def tp(i, j):
        return np.einsum("pb,pa->pba", w[j], u[i]).reshape(len(etas), 16)

    N = tp(0, 0)
    dN = np.stack([tp(1, 0), tp(0, 1)], 1) if order >= 1 else None
    d2N = np.stack([tp(2, 0), tp(1, 1), tp(0, 2)], 1) if order >= 2 else None
    return N, dN, d2N


def bicubic(eta, order=0):
    """Tensor-product basis of the 16 control points, row-major in ``b`` then ``a``.

    Returns ``(N, dN, d2N)`` with ``dN`` of shape (2, 16) and ``d2N`` of shape
    (3, 16) ordered as (11, 12, 22); derivative arrays are ``None`` above ``order``.
    """
    u = bspline_1d(eta[0], order)
    w = bspline_1d(eta[1], order)
    N = np.outer(w[0], u[0]).ravel()
    dN = d2N = None
    if order >= 1:
        dN = np.stack([np.outer(w[0], u[1]).ravel(), np.outer(w[1], u[0]).ravel()])
    if order >= 2:
        d2N = np.stack([np.outer(w[0], u[2]).ravel(),
                        np.outer(w[1], u[1]).ravel(),
                        np.outer(w[2], u[0]).ravel()])
    return N, dN, d2N


@dataclass
class EvalResult:
    """Basis values and parametric derivatives at one point of a patch."""

    values: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    level: int = 0
    clamped: bool = False

    def apply(self, ctrl):
        """Contract with control values of shape ``(n,)`` or ``(n, k)``."""
        ctrl = np.asarray(ctrl, dtype=float)
        out = [self.values @ ctrl]
        if self.d1 is not None:
            out.append(self.d1 @ ctrl)
        if self.d2 is not None:
            out.append(self.d2 @ ctrl)
        return tuple(out)


def _check_eta(eta):
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (2,) or np.any(eta < -1e-12) or np.any(eta > 1 + 1e-12):
        raise ValueError(f"parameter {eta} outside the unit square")
    return np.clip(eta, 0.0, 1.0)


class RegularPatch:
    """Bicubic patch over 16 control points."""

    kind = "regular"
    n_controls = 16

    def evaluate(self, eta, order=0):
        eta = _check_eta(eta)
        return EvalResult(*bicubic(eta, order), level=0)

    def evaluate_many(self, etas, order=0):
        return bicubic_many(etas, order)


class PatchEvaluator:
    """Limit evaluation on the face incident to an extraordinary vertex.

    Control points follow :func:`stencils.ev_patch_keys`: the vertex first, then
    its ``2v`` one-ring neighbours, then seven points of the face's outer ring.
    Parameter ``(0, 0)`` is the extraordinary vertex; ``eta[0]`` runs along the
    sector's first edge.
    """

    kind = "extraordinary"

    def __init__(self, valence, weights=None, level_max=LEVEL_MAX):
        self.valence = v = int(valence)
        if weights is None:
            weights = (v * (v - 2), 1.0, 1.0)
        self.weights = tuple(float(w) for w in weights)
        self.level_max = int(level_max)
        rules = StencilRules(v, *self.weights)
        keys = ev_patch_keys(v)
        ext = ev_patch_extended_keys(v)
        self.keys = keys
        self.n_controls = len(keys)
        self.step = rules.matrix(keys, keys)
        self.step_extended = rules.matrix(ext, keys)
        pos = {k: i for i, k in enumerate(ext)}
        self.picks = {}
        for kind in (1, 2, 3):
            idx = [pos[canon(v, 0, a, b)] for a, b in child_grid(kind)]
            self.picks[kind] = self.step_extended[idx]
        self._powers = [np.eye(len(keys))]

    def _power(self, n):
        while len(self._powers) <= n:
            self._powers.append(self.step @ self._powers[-1])
        return self._powers[n]

    def level_for(self, eta):
        m = max(eta[0], eta[1])
        if m <= 0.0:
            return self.level_max + 1
        # m in [2^-l, 2^(1-l)) -> l; m = 1 stays on level 1
        _, ex = math.frexp(m)
        return max(1, 1 - ex)

    def sub_patch(self, eta):
        """Level, child kind, local parameter and the 16 x n child operator."""
        eta = _check_eta(eta)
        clamped = False
        floor_ = 2.0 ** (1 - self.level_max)
        m = max(eta)
        if m < floor_:
            clamped = True
            eta = eta * (floor_ / m) if m > 0 else np.array([floor_, 0.0])
        level = self.level_for(eta)
        scaled = eta * 2.0 ** level
        ca, cb = int(scaled[0] >= 1.0), int(scaled[1] >= 1.0)
        kind = {(1, 0): 1, (1, 1): 2, (0, 1): 3}[(ca, cb)]
        local = np.clip(scaled - np.array(CHILD_CORNERS[kind], dtype=float), 0.0, 1.0)
        op = self.picks[kind] @ self._power(level - 1)
        return level, kind, local, op, clamped

    def evaluate(self, eta, order=0):
        eta = np.asarray(eta, dtype=float)
        if order >= 2 and np.all(eta == 0.0):
            raise ValueError("second derivatives are undefined at the extraordinary vertex")
        level, _, local, op, clamped = self.sub_patch(eta)
        N, dN, d2N = bicubic(local, order)
        scale = 2.0 ** level
        return EvalResult(
            N @ op,
            None if dN is None else scale * (dN @ op),
            None if d2N is None else scale ** 2 * (d2N @ op),
            level=level, clamped=clamped)


    def _batch(self, etas):
        etas = np.atleast_2d(np.asarray(etas, dtype=float))
        if np.any(etas < -1e-12) or np.any(etas > 1 + 1e-12):
            raise ValueError("parameter outside the unit square")
        etas = np.clip(etas, 0.0, 1.0)
        floor_ = 2.0 ** (1 - self.level_max)
        m = etas.max(axis=1)
        low = m < floor_
        if np.any(low):
            scale = floor_ / np.where(m[low] > 0, m[low], 1.0)
            fix = np.where(m[low, None] > 0, etas[low] * scale[:, None], np.array([floor_, 0.0]))
            etas = etas.copy()
            etas[low] = fix
            m = etas.max(axis=1)
        _, ex = np.frexp(m)
        level = np.maximum(1, 1 - ex)
        scaled = etas * (2.0 ** level)[:, None]
        ca = (scaled[:, 0] >= 1.0).astype(int)
        cb = (scaled[:, 1] >= 1.0).astype(int)
        kind = np.where(ca == 1, np.where(cb == 1, 2, 1), 3)
        corner = np.array([CHILD_CORNERS[k] for k in (1, 2, 3)], dtype=float)[kind - 1]
        local = np.clip(scaled - corner, 0.0, 1.0)
        return level, kind, local

    def evaluate_many(self, etas, order=0):
        """Batched evaluation; returns ``(N, dN, d2N)`` arrays over the controls."""
        etas = np.atleast_2d(np.asarray(etas, dtype=float))
        if order >= 2 and np.any(np.all(etas == 0.0, axis=1)):
            raise ValueError("second derivatives are undefined at the extraordinary vertex")
        level, kind, local = self._batch(etas)
        P, n = len(etas), self.n_controls
        N = np.empty((P, n))
        dN = np.empty((P, 2, n)) if order >= 1 else None
        d2N = np.empty((P, 3, n)) if order >= 2 else None
        for lev, kd in set(zip(level.tolist(), kind.tolist())):
            sel = (level == lev) & (kind == kd)
            op = self.picks[kd] @ self._power(lev - 1)
            b0, b1, b2 = bicubic_many(local[sel], order)
            sc = 2.0 ** lev
            N[sel] = b0 @ op
            if dN is not None:
                dN[sel] = sc * (b1 @ op)
            if d2N is not None:
                d2N[sel] = sc * sc * (b2 @ op)
        return N, dN, d2N


class OneStepPatch:
    """A face near an extraordinary vertex, evaluated through one refinement step.

    ``lower`` is the face's lower-left corner in the sector-0 chart. The
    coarse control keys are whatever the children's stencils reach.
    """

    kind = "one-step"

    def __init__(self, valence, weights, lower):
        v = int(valence)
        rules = StencilRules(v, *weights)
        i0, j0 = lower
        grids = {}
        fine = []
        for ci in (0, 1):
            for cj in (0, 1):
                a0, b0 = 2 * i0 + ci, 2 * j0 + cj
                g = [canon(v, 0, a0 - 1 + i, b0 - 1 + j) for j in range(4) for i in range(4)]
                grids[(ci, cj)] = g
                fine.extend(g)
        support = sorted(rules.support(set(fine)), key=lambda k: (k != EV_KEY, k))
        self.keys = tuple(support)
        self.n_controls = len(support)
        ops = {}
        for c, g in grids.items():
            ops[c] = rules.matrix(g, self.keys)
        self.ops = ops

    def evaluate(self, eta, order=0):
        eta = _check_eta(eta)
        scaled = 2.0 * eta
        c = (min(int(scaled[0]), 1), min(int(scaled[1]), 1))
        local = np.clip(scaled - np.array(c, dtype=float), 0.0, 1.0)
        N, dN, d2N = bicubic(local, order)
        op = self.ops[c]
        return EvalResult(
            N @ op,
            None if dN is None else 2.0 * (dN @ op),
            None if d2N is None else 4.0 * (d2N @ op),
            level=1)


    def evaluate_many(self, etas, order=0):
        etas = np.atleast_2d(np.asarray(etas, dtype=float))
        if np.any(etas < -1e-12) or np.any(etas > 1 + 1e-12):
            raise ValueError("parameter outside the unit square")
        scaled = 2.0 * np.clip(etas, 0.0, 1.0)
        c = np.minimum(scaled.astype(int), 1)
        local = np.clip(scaled - c, 0.0, 1.0)
        P, n = len(etas), self.n_controls
        N = np.empty((P, n))
        dN = np.empty((P, 2, n)) if order >= 1 else None
        d2N = np.empty((P, 3, n)) if order >= 2 else None
        for key, op in self.ops.items():
            sel = (c[:, 0] == key[0]) & (c[:, 1] == key[1])
            if not np.any(sel):
                continue
            b0, b1, b2 = bicubic_many(local[sel], order)
            N[sel] = b0 @ op
            if dN is not None:
                dN[sel] = 2.0 * (b1 @ op)
            if d2N is not None:
                d2N[sel] = 4.0 * (b2 @ op)
        return N, dN, d2N


# lower-left chart corners of the four 2-ring faces of sector 0
RING_FACES = {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (0, 1)}


@lru_cache(maxsize=64)
def _neighbourhood_patches(v, weights):
    out = {0: PatchEvaluator(v, weights)}
    for kind in (1, 2, 3):
        out[kind] = OneStepPatch(v, weights, RING_FACES[kind])
    return out


class NeighbourhoodBasis:
    """Limit basis over the ``12v+1`` layout for the ``4v`` faces of the 2-ring.

    Face ``(s, kind)`` is the face of sector ``s`` with lower-left corner
    ``RING_FACES[kind]``; its parameter axes follow the sector chart.
    """

    def __init__(self, valence, weights):
        self.valence = v = int(valence)
        self.weights = tuple(float(w) for w in weights)
        self.patches = _neighbourhood_patches(v, self.weights)
        self.n = 12 * v + 1
        self._index = {}
        for s in range(v):
            for kind, p in self.patches.items():
                self._index[(s, kind)] = np.array(
                    [ring_index(v, rotate_key(k, s, v)) for k in p.keys])

    @property
    def faces(self):
        return [(s, kind) for s in range(self.valence) for kind in range(4)]

    def evaluate(self, face, eta, order=0):
        """Return ``(indices, EvalResult)`` over the ``12v+1`` layout."""
        s, kind = face
        return self._index[face], self.patches[kind].evaluate(eta, order)

    def dense(self, face, eta, order=0):
        idx, res = self.evaluate(face, eta, order)
        full = []
        for arr in (res.values, res.d1, res.d2):
            if arr is None:
                full.append(None)
                continue
            z = np.zeros(arr.shape[:-1] + (self.n,))
            z[..., idx] = arr
            full.append(z)
        return EvalResult(*full, level=res.level, clamped=res.clamped)

    def dense_many(self, face, etas, order=0):
        """Batched dense evaluation: arrays (P, n), (P, 2, n), (P, 3, n)."""
        idx = self._index[face]
        out = self.patches[face[1]].evaluate_many(etas, order)
        return tuple(_scatter(a, idx, self.n) for a in out)


def _scatter(arr, idx, n):
    if arr is None:
        return None
    z = np.zeros(arr.shape[:-1] + (n,))
    z[..., idx] = arr
    return z


def gauss_points(n):
    """Tensor Gauss-Legendre rule on the unit square: points (n*n, 2), weights."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def chain_second(geo_d1, geo_d2, f_d1, f_d2):
    """Push field derivatives from parameter space to mapped coordinates.

    ``geo_d1`` is the Jacobian ``dx_i/deta_k`` with shape (..., 2, 2) indexed
    ``[..., k, i]`` (derivative first), ``geo_d2`` has shape (..., 3, 2) with
    rows (11, 12, 22). Field derivatives: ``f_d1`` (..., 2), ``f_d2`` (..., 3).
    Returns ``(grad, hess)`` with hess rows (11, 12, 22) in mapped coordinates.
    """
    Jt = np.asarray(geo_d1, dtype=float)
    det = Jt[..., 0, 0] * Jt[..., 1, 1] - Jt[..., 0, 1] * Jt[..., 1, 0]
    if np.any(np.abs(det) < 1e-12):
        raise ValueError("singular parameterisation")
    inv = np.empty_like(Jt)
    inv[..., 0, 0] = Jt[..., 1, 1] / det
    inv[..., 1, 1] = Jt[..., 0, 0] / det
    inv[..., 0, 1] = -Jt[..., 0, 1] / det
    inv[..., 1, 0] = -Jt[..., 1, 0] / det
    grad = np.einsum("...ik,...k->...i", inv, np.asarray(f_d1, dtype=float))
    g2 = np.asarray(geo_d2, dtype=float)
    f2 = np.asarray(f_d2, dtype=float)
    corr = f2 - np.einsum("...ri,...i->...r", g2, grad)
    H = np.empty(corr.shape[:-1] + (2, 2))
    H[..., 0, 0] = corr[..., 0]
    H[..., 0, 1] = H[..., 1, 0] = corr[..., 1]
    H[..., 1, 1] = corr[..., 2]
    # H_eta = Jt H_x Jt^T  ->  H_x = inv H_eta inv^T
    Hx = np.einsum("...ik,...kl,...jl->...ij", inv, H, inv)
    return grad, np.stack([Hx[..., 0, 0], Hx[..., 0, 1], Hx[..., 1, 1]], axis=-1)


QUAD_DEPTH = 10


@lru_cache(maxsize=64)
def piece_quadrature(kind, n, depth=QUAD_DEPTH):
    """Gauss rule with ``n x n`` points on every polynomial piece of a face.

    ``kind`` is ``"regular"``, ``"one-step"`` (four half-size children) or
    ``"extraordinary"`` (the three children of each level down to ``depth``,
    then one square at the vertex). Weights sum to one.
    """
    pts, wts = gauss_points(n)
    if kind == "regular":
        squares = [((0.0, 0.0), 1.0)]
    elif kind == "one-step":
        squares = [((0.5 * i, 0.5 * j), 0.5) for j in (0, 1) for i in (0, 1)]
    elif kind == "extraordinary":
        squares = []
        for lev in range(1, depth + 1):
            h = 2.0 ** -lev
            squares += [((h * a, h * b), h) for a, b in CHILD_CORNERS.values()]
        squares.append(((0.0, 0.0), 2.0 ** -depth))
    else:
        raise ValueError(f"unknown patch kind {kind!r}")
    P = np.concatenate([np.asarray(o) + h * pts for o, h in squares])
    W = np.concatenate([h * h * wts for _, h in squares])
    P.setflags(write=False)
    W.setflags(write=False)
    return P, W


def char_map(E, eta, s=1, order=0):
    """Characteristic map on the extraordinary face of sector ``s`` (1-based).

    Returns ``xi`` and, up to ``order``, the parametric derivatives of ``xi``:
    ``d1[k, i] = dxi_i/deta_k`` and ``d2`` with rows (11, 12, 22).
    """
    v = E.valence
    if not 1 <= s <= v:
        raise ValueError(f"sector must lie in 1..{v}")
    nb = NeighbourhoodBasis(v, E.weights)
    res = nb.dense((s - 1, 0), eta, order)
    return res.apply(np.column_stack([E.r1, E.r2]))


def limit_value(E, p):
    """Limit position of the extraordinary vertex: ``<l0, p>``."""
    p = np.asarray(p, dtype=float)
    if p.shape[0] != E.left.shape[0]:
        raise ValueError(f"expected {E.left.shape[0]} control values, got {p.shape[0]}")
    return E.left[:, 0] @ p
