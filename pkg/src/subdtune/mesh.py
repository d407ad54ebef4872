"""Quad control meshes: OBJ I/O, topology, ghost rings and tunable Catmull-Clark refinement."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .stencils import canon, ring_index

log = logging.getLogger(__name__)


class MeshError(ValueError):
    pass


class ControlMesh:
    """Immutable quad mesh. Faces are counter-clockwise vertex quadruples.

    ``ghost`` flags vertices that belong to an attached ghost ring; they are
    geometry helpers only and never carry independent unknowns.
    """

    def __init__(self, vertices, faces, ghost=None, validate=True):
        V = np.array(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] not in (2, 3):
            raise MeshError("vertices must have shape (n, 3)")
        if V.shape[1] == 2:
            V = np.column_stack([V, np.zeros(len(V))])
        Fc = np.array(faces, dtype=np.int64).reshape(-1, 4)
        g = np.zeros(len(V), dtype=bool) if ghost is None else np.array(ghost, dtype=bool)
        if g.shape != (len(V),):
            raise MeshError("ghost mask length differs from vertex count")
        for arr in (V, Fc, g):
            arr.setflags(write=False)
        self.vertices, self.faces, self.ghost = V, Fc, g
        if validate:
            for i, f in enumerate(Fc):
                _check_face(f, len(V), f"face {i}")
            self.topology  # noqa: B018 - raises on non-manifold input

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @cached_property
    def topology(self):
        return Topology(self)

    @property
    def extraordinary(self):
        return self.topology.extraordinary

    def with_vertices(self, vertices):
        return ControlMesh(vertices, self.faces, self.ghost, validate=False)

    def __repr__(self):
        return (f"ControlMesh({self.n_vertices} vertices, {self.n_faces} faces, "
                f"{len(self.extraordinary)} extraordinary)")


def _check_face(f, n, where):
    if len(f) != 4:
        raise MeshError(f"non-quad face at {where}")
    if len(set(int(i) for i in f)) != 4:
        raise MeshError(f"degenerate face (repeated vertex) at {where}")
    for i in f:
        if not 0 <= i < n:
            raise MeshError(f"vertex index {int(i) + 1} out of range at {where}")


class Topology:
    """Half-edge style adjacency of a :class:`ControlMesh`."""

    def __init__(self, mesh, lines=None):
        n = mesh.n_vertices
        self.halfedge = {}
        edges = {}
        order = []
        for fi, f in enumerate(mesh.faces):
            for k in range(4):
                a, b = int(f[k]), int(f[(k + 1) % 4])
                where = f"line {lines[fi]}" if lines is not None else f"face {fi}"
                if (a, b) in self.halfedge:
                    raise MeshError(f"non-manifold or inconsistently oriented edge "
                                    f"({a + 1}, {b + 1}) at {where}")
                self.halfedge[(a, b)] = fi
                key = (min(a, b), max(a, b))
                if key not in edges:
                    edges[key] = []
                    order.append(key)
                edges[key].append(fi)
        self.edges = np.array(order, dtype=np.int64).reshape(-1, 2)
        self.edge_index = {e: i for i, e in enumerate(order)}
        self.boundary_edges = [e for e in order if len(edges[e]) == 1]
        self.face_count = np.bincount(mesh.faces.ravel(), minlength=n)
        self.boundary = np.zeros(n, dtype=bool)
        for a, b in self.boundary_edges:
            self.boundary[a] = self.boundary[b] = True
        self.ghost = mesh.ghost
        self.faces = mesh.faces
        interior = ~self.boundary & (self.face_count > 0)
        if np.any(interior & (self.face_count < 3)):
            bad = int(np.nonzero(interior & (self.face_count < 3))[0][0])
            raise MeshError(f"interior vertex {bad + 1} has valence below 3")
        self.valence = self.face_count
        self.some_face = np.full(n, -1, dtype=np.int64)
        fl = mesh.faces.ravel()
        self.some_face[fl[::-1]] = np.repeat(np.arange(len(mesh.faces)), 4)[::-1]
        self.extraordinary = [int(i) for i in np.nonzero(interior & (self.face_count != 4))[0]]

    def next_in_face(self, f, a):
        face = self.faces[f]
        k = int(np.nonzero(face == a)[0][0])
        return int(face[(k + 1) % 4]), int(face[(k + 3) % 4])

    def one_ring(self, v, first=None):
        """Counter-clockwise outgoing neighbours and faces around an interior vertex."""
        if self.boundary[v]:
            raise MeshError(f"vertex {v + 1} lies on the boundary")
        start = None
        if first is not None:
            start = self.halfedge.get((v, first))
            if start is None:
                raise MeshError(f"{first + 1} is not a neighbour of {v + 1}")
        else:
            start = int(self.some_face[v])
        nbrs, faces = [], []
        f = start
        for _ in range(self.valence[v] + 1):
            nxt, prv = self.next_in_face(f, v)
            nbrs.append(nxt)
            faces.append(f)
            f = self.halfedge.get((v, prv))
            if f is None:
                raise MeshError(f"open one-ring at vertex {v + 1}")
            if f == start:
                break
        else:
            raise MeshError(f"one-ring of vertex {v + 1} does not close")
        return nbrs, faces


# ---------------------------------------------------------------- OBJ I/O

def load_mesh(path):
    """Read an OBJ quad mesh; ``# ghost <id>`` comment lines flag ghost vertices."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read mesh file {path}: {exc.strerror}") from exc
    return parse_obj(text)


def parse_obj(text):
    verts, faces, lines, ghosts = [], [], [], []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "ghost":
                ghosts.append((no, parts[1]))
            continue
        tok = line.split()
        if tok[0] == "v":
            try:
                xyz = [float(t) for t in tok[1:4]]
            except ValueError as exc:
                raise MeshError(f"bad vertex at line {no}") from exc
            if len(xyz) < 2:
                raise MeshError(f"bad vertex at line {no}")
            verts.append(xyz + [0.0] * (3 - len(xyz)))
        elif tok[0] == "f":
            try:
                idx = [int(t.split("/")[0]) for t in tok[1:]]
            except ValueError as exc:
                raise MeshError(f"bad face at line {no}") from exc
            if len(idx) != 4:
                raise MeshError(f"non-quad face at line {no}")
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            _check_face(idx, len(verts), f"line {no}")
            faces.append(idx)
            lines.append(no)
        # other records (vn, vt, o, g, s, usemtl) carry nothing we use
    ghost = np.zeros(len(verts), dtype=bool)
    for no, tok in ghosts:
        try:
            gi = int(tok) - 1
        except ValueError as exc:
            raise MeshError(f"bad ghost marker at line {no}") from exc
        if not 0 <= gi < len(verts):
            raise MeshError(f"ghost id out of range at line {no}")
        ghost[gi] = True
    if not faces:
        raise MeshError("mesh has no faces")
    mesh = ControlMesh(verts, faces, ghost, validate=False)
    mesh.__dict__["topology"] = Topology(mesh, lines)
    return mesh


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_obj(mesh, include_ghosts=False, comment=None):
    keep = np.ones(mesh.n_vertices, dtype=bool) if include_ghosts else ~mesh.ghost
    new_id = -np.ones(mesh.n_vertices, dtype=np.int64)
    new_id[keep] = np.arange(keep.sum())
    out = []
    if comment:
        out += [f"# {ln}" for ln in comment.splitlines()]
    for p in mesh.vertices[keep]:
        out.append("v {:.17g} {:.17g} {:.17g}".format(*p))
    for f in mesh.faces:
        if np.any(new_id[f] < 0):
            continue
        out.append("f " + " ".join(str(int(i) + 1) for i in new_id[f]))
    if include_ghosts:
        out += [f"# ghost {int(i) + 1}" for i in np.nonzero(mesh.ghost)[0]]
    return "\n".join(out) + "\n"


def write_mesh(mesh, path, include_ghosts=False, comment=None):
    atomic_write(path, format_obj(mesh, include_ghosts, comment))


# ---------------------------------------------------------------- weights

class WeightAssignment:
    """Per-vertex ``(alpha, beta, gamma)``; unlisted vertices use the classic weights."""

    def __init__(self, weights=None):
        self._w = {}
        for k, w in (weights or {}).items():
            w = tuple(float(x) for x in w)
            if len(w) != 3 or min(w) <= 0:
                raise ValueError(f"weights for vertex {k} must be three positive numbers")
            self._w[int(k)] = w

    @staticmethod
    def default(v):
        return (float(v * (v - 2)), 1.0, 1.0)

    def get(self, vid, valence):
        return self._w.get(int(vid), self.default(valence))

    def items(self):
        return self._w.items()

    def __contains__(self, vid):
        return int(vid) in self._w

    def __len__(self):
        return len(self._w)

    def __repr__(self):
        return f"WeightAssignment({self._w})"


# ---------------------------------------------------------------- ghost ring

@dataclass(frozen=True)
class GhostRing:
    """Augmented mesh plus the linear reflection map defining ghost vertices.

    ``reflect`` has one row per augmented vertex: identity on original
    vertices, the reflection stencil on ghosts (over original vertices).
    """

    mesh: ControlMesh
    n_original: int
    reflect: object = field(repr=False)


def attach_ghosts(mesh):
    """Reflect the boundary layer outward so every original face is interior."""
    top = mesh.topology
    n = mesh.n_vertices
    if not top.boundary_edges:
        import scipy.sparse as sp
        return GhostRing(mesh, n, sp.identity(n, format="csr"))
    for b in np.nonzero(top.boundary)[0]:
        if top.face_count[b] not in (1, 2):
            raise MeshError(f"boundary vertex {b + 1} has {top.face_count[b]} faces; "
                            "only straight boundaries and corners are supported")
    rows = []  # stencils {vertex: coeff}
    ghost_of = {}

    def ghost(p, r):
        # reflection of p's in-face neighbour r through p
        key = (p, r) if top.face_count[p] == 1 else (p, None)
        if key not in ghost_of:
            ghost_of[key] = n + len(rows)
            rows.append({p: 2.0, r: -1.0})
        return ghost_of[key]

    new_faces = []
    corner_faces = []
    for a, b in top.boundary_edges:
        f = top.halfedge.get((a, b))
        p, q = (a, b) if f is not None else (b, a)
        f = top.halfedge[(p, q)]
        face = list(mesh.faces[f])
        k = face.index(p)
        t, r = face[(k + 2) % 4], face[(k + 3) % 4]
        gp, gq = ghost(p, r), ghost(q, t)
        new_faces.append((q, p, gp, gq))
    for c in np.nonzero(top.boundary & (top.face_count == 1))[0]:
        c = int(c)
        f = int(top.some_face[c])
        face = list(mesh.faces[f])
        k = face.index(c)
        q, d, r = face[(k + 1) % 4], face[(k + 2) % 4], face[(k + 3) % 4]
        g_cq, g_rc = ghost_of[(c, r)], ghost_of[(c, q)]
        gg = n + len(rows)
        rows.append({c: 4.0, q: -2.0, r: -2.0, d: 1.0})
        corner_faces.append((c, g_rc, gg, g_cq))
    m = n + len(rows)
    R = _stencil_matrix([None] * n + rows, (m, n))
    V = R @ mesh.vertices
    faces = np.vstack([mesh.faces, np.array(new_faces + corner_faces, dtype=np.int64)])
    ghost_mask = np.r_[mesh.ghost, np.ones(len(rows), dtype=bool)]
    aug = ControlMesh(V, faces, ghost_mask)
    return GhostRing(aug, n, R)


# ---------------------------------------------------------------- refinement

def refinement_operator(mesh, weights=None):
    """Sparse ``(V+E+F) x V`` matrix of one tunable Catmull-Clark step.

    Boundary meshes are refined through a temporary ghost ring, so all rules
    are the interior ones; the result keeps only children of original faces.
    New vertex order: vertex points, then edge points (in edge order), then
    face points, so vertex ids are preserved across levels.
    """
    w = weights if weights is not None else WeightAssignment()
    gr = attach_ghosts(mesh)
    aug, n0 = gr.mesh, gr.n_original
    top0 = mesh.topology
    ta = aug.topology
    for vid, _ in w.items():
        if not 0 <= vid < mesh.n_vertices or top0.boundary[vid]:
            raise MeshError(f"weights given for vertex {vid + 1}, which is not interior")
    # tunable vertices: every extraordinary vertex plus any explicitly weighted one
    ev = set(top0.extraordinary) | {vid for vid, _ in w.items()}
    wt = {e: w.get(e, top0.valence[e]) for e in ev}

    nf_all = aug.n_faces
    # face points over augmented vertices
    fp = []
    for f in aug.faces:
        c = {int(x): (wt[int(x)][2] if int(x) in ev else 1.0) for x in f}
        tot = sum(c.values())
        fp.append({k: val / tot for k, val in c.items()})

    def add(acc, st, s=1.0):
        for k, val in st.items():
            acc[k] = acc.get(k, 0.0) + s * val

    rows = []
    # vertex points of original vertices
    for vid in range(n0):
        val = ta.valence[vid]
        if ta.boundary[vid]:
            raise MeshError(f"vertex {vid + 1} is not covered by the ghost ring")
        nbrs, faces = ta.one_ring(vid)
        alpha = wt[vid][0] if vid in ev else (8.0 if val == 4 else float(val * (val - 2)))
        tot = alpha + 2.0 * val
        st = {vid: alpha / tot}
        for u in nbrs:
            add(st, {u: 1.0}, 1.0 / tot)
        for f in faces:
            add(st, fp[f], 1.0 / tot)
        rows.append(st)
    # edge points of original edges
    for a, b in top0.edges:
        a, b = int(a), int(b)
        fa, fb = ta.halfedge[(a, b)], ta.halfedge[(b, a)]
        ca = wt[a][1] if a in ev else 1.0
        cb = wt[b][1] if b in ev else 1.0
        tot = ca + cb + 2.0
        st = {a: ca / tot}
        add(st, {b: cb / tot})
        add(st, fp[fa], 1.0 / tot)
        add(st, fp[fb], 1.0 / tot)
        rows.append(st)
    for f in range(mesh.n_faces):
        rows.append(fp[f])
    # compose with the ghost reflection to act on original vertices
    M = _stencil_matrix(rows, (len(rows), aug.n_vertices))
    assert nf_all >= mesh.n_faces
    return (M @ gr.reflect).tocsr()


def _stencil_matrix(rows, shape):
    """CSR matrix from per-row ``{column: value}`` dicts; ``None`` is an identity row."""
    import scipy.sparse as sp

    r, c, v = [], [], []
    for i, st in enumerate(rows):
        if st is None:
            st = {i: 1.0}
        r.extend([i] * len(st))
        c.extend(st.keys())
        v.extend(st.values())
    return sp.csr_matrix((v, (r, c)), shape=shape)


def refined_faces(mesh):
    top = mesh.topology
    nv, ne = mesh.n_vertices, len(top.edges)
    out = []
    for fi, f in enumerate(mesh.faces):
        e = [nv + top.edge_index[tuple(sorted((int(f[k]), int(f[(k + 1) % 4]))))] for k in range(4)]
        c = nv + ne + fi
        for k in range(4):
            out.append((int(f[k]), e[k], c, e[(k + 3) % 4]))
    return np.array(out, dtype=np.int64)


def subdivide(mesh, weights=None):
    """One Catmull-Clark step with tunable weights at extraordinary vertices."""
    if np.any(mesh.ghost):
        raise MeshError("subdivide expects a mesh without ghost vertices")
    S = refinement_operator(mesh, weights)
    V = S @ mesh.vertices
    return ControlMesh(V, refined_faces(mesh), validate=False)


def refine(mesh, levels, weights=None):
    for _ in range(int(levels)):
        mesh = subdivide(mesh, weights)
    return mesh


def edge_child(mesh, a, b):
    """Index, in ``subdivide(mesh)``, of the edge point of edge ``(a, b)``."""
    top = mesh.topology
    return mesh.n_vertices + top.edge_index[(min(a, b), max(a, b))]


# ---------------------------------------------------------------- chart walking

def _step(top, cell, direction):
    """Neighbour cell across one side; ``cell`` lists corners (00, 10, 11, 01)."""
    p00, p10, p11, p01 = cell
    if direction == "E":
        a, b = p11, p10
    elif direction == "N":
        a, b = p01, p11
    elif direction == "W":
        a, b = p00, p01
    else:
        a, b = p10, p00
    f = top.halfedge.get((a, b))
    if f is None:
        return None
    face = [int(x) for x in top.faces[f]]
    k = face.index(a)
    g2, g3 = face[(k + 2) % 4], face[(k + 3) % 4]
    if direction == "E":
        return (p10, g2, g3, p11)
    if direction == "N":
        return (p01, p11, g2, g3)
    if direction == "W":
        return (g3, p00, p01, g2)
    return (g2, g3, p10, p00)


_MOVES = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}


def walk_cells(top, seed, cells):
    """Flood-fill grid ``cells`` from ``seed`` (cell (0, 0)); returns cell -> corners."""
    want = set(cells)
    found = {(0, 0): tuple(seed)}
    queue = [(0, 0)]
    while queue:
        c = queue.pop(0)
        for d, (di, dj) in _MOVES.items():
            nc = (c[0] + di, c[1] + dj)
            if nc not in want or nc in found:
                continue
            nxt = _step(top, found[c], d)
            if nxt is None:
                continue
            found[nc] = nxt
            queue.append(nc)
    return found


def _grid_points(found):
    pts = {}
    for (i, j), (p00, p10, p11, p01) in found.items():
        for (a, b), vid in (((i, j), p00), ((i + 1, j), p10), ((i + 1, j + 1), p11), ((i, j + 1), p01)):
            if pts.setdefault((a, b), vid) != vid:
                raise MeshError("irregular neighbourhood: grid walk is inconsistent")
    return pts


def regular_grid(mesh, face):
    """16 control ids of a regular face, row-major in ``b`` then ``a``, or ``None``."""
    top = mesh.topology
    f = [int(x) for x in mesh.faces[face]]
    cells = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    found = walk_cells(top, f, cells)
    if len(found) != 9:
        return None
    try:
        pts = _grid_points(found)
    except MeshError:
        return None
    ids = [pts[(a, b)] for b in range(-1, 3) for a in range(-1, 3)]
    if len(set(ids)) != 16:
        return None
    return ids


def _across(mesh):
    """Face and local edge across each half-edge, as ``(F, 4)`` arrays (-1 on the boundary)."""
    F = mesh.faces
    nf = len(F)
    a, b = F.ravel(), np.roll(F, -1, axis=1).ravel()
    n = mesh.n_vertices
    key, rev = a * n + b, b * n + a
    order = np.argsort(key)
    pos = np.searchsorted(key[order], rev)
    pos = np.minimum(pos, len(key) - 1)
    hit = key[order[pos]] == rev
    h = np.where(hit, order[pos], -1)
    face = np.where(h >= 0, h // 4, -1).reshape(nf, 4)
    edge = np.where(h >= 0, h % 4, -1).reshape(nf, 4)
    return face, edge


def regular_grids(mesh):
    """Vectorised :func:`regular_grid` for every face; rows of ``-1`` mark irregular faces."""
    F = mesh.faces
    nf = len(F)
    face, edge = _across(mesh)
    ok = np.ones(nf, dtype=bool)

    def step(cf, cr, e):
        # cell (face, rotation): corners (00, 10, 11, 01) are face[(r + i) % 4]
        good = cf >= 0
        k = (np.where(good, cr, 0) + e) % 4
        fc = np.where(good, cf, 0)
        g, j = face[fc, k], edge[fc, k]
        good &= g >= 0
        return np.where(good, g, -1), np.where(good, (j - (e + 2)) % 4, 0)

    c = (np.arange(nf), np.zeros(nf, dtype=np.int64))
    E, W, N, S = (step(*c, e) for e in (1, 3, 2, 0))
    NE, NE2 = step(*E, 2), step(*N, 1)
    NW, NW2 = step(*W, 2), step(*N, 3)
    SE, SE2 = step(*E, 0), step(*S, 1)
    SW, SW2 = step(*W, 0), step(*S, 3)
    for x, y in ((NE, NE2), (NW, NW2), (SE, SE2), (SW, SW2)):
        ok &= (x[0] >= 0) & (x[0] == y[0]) & (x[1] == y[1])

    def corner(cell, i):
        cf, cr = cell
        return F[np.maximum(cf, 0), (cr + i) % 4]

    # grid point (a, b) for a, b in -1..2, taken from the cell whose corner it is
    cells = {(-1, -1): SW, (0, -1): S, (1, -1): SE, (-1, 0): W, (0, 0): c,
             (1, 0): E, (-1, 1): NW, (0, 1): N, (1, 1): NE}
    out = np.empty((nf, 16), dtype=np.int64)
    col = 0
    for b in range(-1, 3):
        for a in range(-1, 3):
            ci, cj = min(a, 1), min(b, 1)
            i = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}[(a - ci, b - cj)]
            out[:, col] = corner(cells[(ci, cj)], i)
            col += 1
    srt = np.sort(out, axis=1)
    ok &= np.all(np.diff(srt, axis=1) > 0, axis=1)
    out[~ok] = -1
    return out


@dataclass(frozen=True)
class LocalPatch:
    ev: int
    valence: int
    indices: tuple

    def __len__(self):
        return len(self.indices)


def sector_faces(mesh, ev, first=None):
    """Faces around ``ev`` in counter-clockwise order, starting at edge ``ev -> first``."""
    nbrs, faces = mesh.topology.one_ring(ev, first)
    return nbrs, faces


def local_patch(mesh, ev, rings=3, first=None):
    """Canonical ``12v+1`` ordering of the 3-neighbourhood of an extraordinary vertex."""
    if rings != 3:
        raise ValueError("only 3-neighbourhoods are supported")
    top = mesh.topology
    ev = int(ev)
    if top.boundary[ev]:
        raise MeshError("insufficient ring depth: vertex lies on the boundary")
    v = int(top.valence[ev])
    nbrs, faces = top.one_ring(ev, first)
    cells = [(i, j) for i in range(3) for j in range(3)]
    keyed = {(0, 0, 0): ev}
    for s in range(v):
        f = [int(x) for x in mesh.faces[faces[s]]]
        k = f.index(ev)
        seed = (f[k], f[(k + 1) % 4], f[(k + 2) % 4], f[(k + 3) % 4])
        found = walk_cells(top, seed, cells)
        if len(found) != 9:
            raise MeshError("insufficient ring depth: neighbourhood reaches the boundary")
        pts = _grid_points(found)
        for (a, b), vid in pts.items():
            key = canon(v, s, a, b)
            if keyed.setdefault(key, vid) != vid:
                raise MeshError("EV separation violated: neighbourhood is not a simple fan")
    if len(keyed) != 12 * v + 1:
        raise MeshError("EV separation violated: neighbourhood is not a simple fan")
    idx = [None] * (12 * v + 1)
    for key, vid in keyed.items():
        idx[ring_index(v, key)] = vid
    if len(set(idx)) != len(idx):
        raise MeshError("EV separation violated: neighbourhood folds onto itself")
    evs = set(top.extraordinary)
    for vid in idx[1:]:
        if vid in evs:
            raise MeshError("EV separation violated: second extraordinary vertex "
                            f"{vid + 1} in the 3-neighbourhood of {ev + 1}")
    return LocalPatch(ev, v, tuple(idx))


# ---------------------------------------------------------------- generators

def grid_mesh(nx, ny, lx=1.0, ly=1.0):
    """Regular ``nx x ny`` quad grid on ``[0, lx] x [0, ly]``."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    V = [(x, y, 0.0) for y in ys for x in xs]
    F = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            F.append((a, a + 1, a + nx + 2, a + nx + 1))
    return ControlMesh(V, F)


def star_mesh(v, rings=3, radius=1.0):
    """Fan of ``v`` sectors with ``rings x rings`` faces each around one vertex.

    Sector ``s`` spans the rays at angles ``2 pi s / v`` and ``2 pi (s+1) / v``;
    vertex ``(s, a, b)`` sits at ``a e_s + b e_{s+1}`` scaled to ``radius``.
    """
    keys = {(0, 0, 0): 0}
    pos = [(0.0, 0.0, 0.0)]
    for s in range(v):
        for a in range(rings + 1):
            for b in range(rings + 1):
                if a == 0 and b == 0:
                    continue
                k = canon(v, s, a, b)
                if k in keys:
                    continue
                s0, a0, b0 = k
                t0, t1 = 2 * np.pi * s0 / v, 2 * np.pi * (s0 + 1) / v
                x = (a0 * np.cos(t0) + b0 * np.cos(t1)) * radius / rings
                y = (a0 * np.sin(t0) + b0 * np.sin(t1)) * radius / rings
                keys[k] = len(pos)
                pos.append((x, y, 0.0))
    F = []
    for s in range(v):
        for i in range(rings):
            for j in range(rings):
                F.append(tuple(keys[canon(v, s, a, b)] for a, b in
                               ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1))))
    return ControlMesh(pos, F)


def split_polygons(points, polygons, centres=None):
    """Quad mesh from a planar polygon partition by joining centres to edge midpoints.

    An ``n``-gon becomes ``n`` quads around its centre, so the centre has
    valence ``n``. ``centres`` overrides the vertex average per polygon.
    """
    pts = [tuple(float(c) for c in p) + (0.0,) * (3 - len(p)) for p in points]
    V = list(pts)
    mids = {}

    def mid(a, b):
        k = (min(a, b), max(a, b))
        if k not in mids:
            mids[k] = len(V)
            V.append(tuple(0.5 * (pts[a][i] + pts[b][i]) for i in range(3)))
        return mids[k]

    F = []
    for pi, poly in enumerate(polygons):
        n = len(poly)
        if centres is not None and centres[pi] is not None:
            c = tuple(float(x) for x in centres[pi]) + (0.0,) * (3 - len(centres[pi]))
        else:
            c = tuple(float(np.mean([pts[q][i] for q in poly])) for i in range(3))
        ci = len(V)
        V.append(c)
        for k in range(n):
            F.append((ci, mid(poly[k - 1], poly[k]), poly[k], mid(poly[k], poly[(k + 1) % n])))
    return ControlMesh(V, F)
