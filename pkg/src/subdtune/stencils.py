"""Symbolic Catmull-Clark stencils on the polar chart around one extraordinary vertex.

The neighbourhood of an extraordinary vertex (EV) of valence ``v`` is covered by
``v`` sectors. Sector ``s`` is spanned by the edge rays ``e_s`` and ``e_{s+1}``
(counter-clockwise) and carries integer grid coordinates ``(a, b)``, with the EV
at ``(0, 0)``. A sector owns the points with ``a >= 1`` and ``b >= 0``; points
with ``a <= 0`` or ``b < 0`` are re-expressed in the neighbouring sector.

A key is a tuple ``(s, a, b)`` in canonical (owned) form; the EV is ``EV_KEY``.
All stencils are dictionaries ``{key: weight}`` over keys of the coarse level.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

EV_KEY = (0, 0, 0)

# ring-major, counter-clockwise order of the 12 points a sector owns in the
# 3-neighbourhood
SEGMENT_ORDER = (
    (1, 0), (1, 1),
    (2, 0), (2, 1), (2, 2), (1, 2),
    (3, 0), (3, 1), (3, 2), (3, 3), (2, 3), (1, 3),
)
_SEGMENT_POS = {ab: i for i, ab in enumerate(SEGMENT_ORDER)}


def canon(v, s, a, b):
    """Return the canonical key of chart point ``(a, b)`` of sector ``s``."""
    if a < 0 and b < 0:
        raise ValueError(f"chart point ({a}, {b}) is ambiguous near the EV")
    while not (a >= 1 and b >= 0):
        if a == 0 and b == 0:
            return EV_KEY
        if b < 0:
            s, a, b = s - 1, -b, a
        else:
            s, a, b = s + 1, b, -a
    return (s % v, a, b)


def rotate_key(key, shift, v):
    if key == EV_KEY:
        return key
    s, a, b = key
    return ((s + shift) % v, a, b)


def ring_keys(v, rings=3):
    """Keys of the ``rings``-neighbourhood in segment-major canonical order."""
    if rings != 3:
        raise ValueError("only the 3-neighbourhood layout is defined")
    keys = [EV_KEY]
    for s in range(v):
        keys.extend((s, a, b) for a, b in SEGMENT_ORDER)
    return keys


def ring_index(v, key):
    """Position of ``key`` in the ``12v+1`` layout."""
    if key == EV_KEY:
        return 0
    s, a, b = key
    return 1 + 12 * s + _SEGMENT_POS[(a, b)]


class StencilRules:
    """Cascaded Catmull-Clark rules with tunable weights at the EV.

    ``alpha`` scales the EV in its own vertex rule, ``beta`` scales the EV in the
    edge rule of its incident edges and ``gamma`` scales the EV in the face rule
    of its incident faces. Every other vertex uses the standard rules.
    """

    def __init__(self, v, alpha, beta, gamma):
        if v < 3:
            raise ValueError("valence must be at least 3")
        if min(alpha, beta, gamma) <= 0:
            raise ValueError("weights must be strictly positive")
        self.v = int(v)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.gamma = float(gamma)
        self._cache = {}

    def _add(self, acc, stencil, w):
        for k, c in stencil.items():
            acc[k] = acc.get(k, 0.0) + w * c

    def face_point(self, s, i, j):
        """Face point of the face with lower-left corner ``(i, j)`` in sector ``s``."""
        v = self.v
        corners = [canon(v, s, i, j), canon(v, s, i + 1, j),
                   canon(v, s, i, j + 1), canon(v, s, i + 1, j + 1)]
        w = [self.gamma if c == EV_KEY else 1.0 for c in corners]
        tot = sum(w)
        out = {}
        for c, wc in zip(corners, w):
            out[c] = out.get(c, 0.0) + wc / tot
        return out

    def edge_point(self, s, p, q):
        """Edge point of the edge between adjacent chart points ``p`` and ``q``."""
        v = self.v
        (a0, b0), (a1, b1) = sorted([p, q])
        if b0 == b1:
            faces = [(a0, b0), (a0, b0 - 1)]
        else:
            faces = [(a0, b0), (a0 - 1, b0)]
        ends = [canon(v, s, a0, b0), canon(v, s, a1, b1)]
        w = [self.beta if e == EV_KEY else 1.0 for e in ends]
        tot = sum(w) + 2.0
        out = {}
        for e, we in zip(ends, w):
            out[e] = out.get(e, 0.0) + we / tot
        for f in faces:
            self._add(out, self.face_point(s, *f), 1.0 / tot)
        return out

    def vertex_point(self, key):
        v = self.v
        out = {}
        if key == EV_KEY:
            tot = self.alpha + 2.0 * v
            out[EV_KEY] = self.alpha / tot
            for t in range(v):
                self._add(out, {(t, 1, 0): 1.0}, 1.0 / tot)
                self._add(out, self.face_point(t, 0, 0), 1.0 / tot)
            return out
        s, a, b = key
        out[key] = 8.0 / 16.0
        for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            self._add(out, {canon(v, s, a + da, b + db): 1.0}, 1.0 / 16.0)
        for fa, fb in ((a - 1, b - 1), (a, b - 1), (a - 1, b), (a, b)):
            self._add(out, self.face_point(s, fa, fb), 1.0 / 16.0)
        return out

    def new_point(self, key):
        """Stencil of a fine-level point (canonical key) over coarse-level keys."""
        if key in self._cache:
            return self._cache[key]
        if key == EV_KEY:
            st = self.vertex_point(EV_KEY)
        else:
            s, a, b = key
            if a % 2 == 0 and b % 2 == 0:
                st = self.vertex_point(canon(self.v, s, a // 2, b // 2))
            elif a % 2 == 1 and b % 2 == 0:
                st = self.edge_point(s, ((a - 1) // 2, b // 2), ((a + 1) // 2, b // 2))
            elif a % 2 == 0 and b % 2 == 1:
                st = self.edge_point(s, (a // 2, (b - 1) // 2), (a // 2, (b + 1) // 2))
            else:
                st = self.face_point(s, (a - 1) // 2, (b - 1) // 2)
        self._cache[key] = st
        return st

    def matrix(self, new_keys, old_keys):
        """Dense refinement operator from ``old_keys`` values to ``new_keys`` values."""
        col = {k: j for j, k in enumerate(old_keys)}
        M = np.zeros((len(new_keys), len(old_keys)))
        for i, k in enumerate(new_keys):
            for ok, w in self.new_point(k).items():
                if ok not in col:
                    raise KeyError(f"stencil of {k} reaches {ok}, outside the coarse set")
                M[i, col[ok]] += w
        return M

    def support(self, new_keys):
        keys = set()
        for k in new_keys:
            keys.update(self.new_point(k))
        return keys


@lru_cache(maxsize=None)
def ev_patch_keys(v):
    """The ``2v+8`` control keys of the EV face of sector 0, EV first."""
    keys = [EV_KEY]
    for t in range(v):
        keys += [(t, 1, 0), (t, 1, 1)]
    extra = [(2, -1), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (-1, 2)]
    keys += [canon(v, 0, a, b) for a, b in extra]
    if len(set(keys)) != 2 * v + 8:
        raise AssertionError("EV patch keys are not distinct")
    return tuple(keys)


# 4x4 control grids (chart offsets) of the three regular children of the EV face
# after one step, in fine-level coordinates of sector 0; row-major in b then a.
def _grid(a0, b0):
    return [(a0 + i, b0 + j) for j in range(4) for i in range(4)]


CHILD_CORNERS = {1: (1, 0), 2: (1, 1), 3: (0, 1)}


def child_grid(kind):
    a0, b0 = CHILD_CORNERS[kind]
    return _grid(a0 - 1, b0 - 1)


@lru_cache(maxsize=None)
def ev_patch_extended_keys(v):
    """Fine-level keys reached by one step of the EV face: ``2v+17`` points."""
    keys = list(ev_patch_keys(v))
    seen = set(keys)
    for kind in (1, 2, 3):
        for a, b in child_grid(kind):
            k = canon(v, 0, a, b)
            if k not in seen:
                seen.add(k)
                keys.append(k)
    if len(keys) != 2 * v + 17:
        raise AssertionError(f"expected {2 * v + 17} extended keys, got {len(keys)}")
    return tuple(keys)
