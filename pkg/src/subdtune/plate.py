"""Kirchhoff thin-plate bending on subdivision bases, with analytic references.

The plate occupies ``[0, L]^2`` and is simply supported. Control meshes are
refined with the classic Catmull-Clark weights; basis functions near each
extraordinary vertex use that vertex's assigned weights. One transverse
displacement per control vertex is the only unknown.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from .limit import NeighbourhoodBasis, RING_FACES, bicubic_many, piece_quadrature
from .mesh import (
    ControlMesh, MeshError, WeightAssignment, attach_ghosts, local_patch, refine,
    refinement_operator, regular_grids, subdivide,
)
from .spectral import eigensystem_for
from .stencils import canon, ring_keys
from .tuner import energy_density, quadratic

log = logging.getLogger(__name__)

QUADRATURE = 4
BATCH = 2048
DIRECT_LIMIT = 20_000
RESIDUAL_TOL = 1e-12
REFINEMENT_STEPS = 4
CG_MAXITER = 2000
SMOOTHING = 4


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class Material:
    E: float = 200e9
    t: float = 0.1
    mu: float = 0.3

    @property
    def D(self):
        return self.E * self.t ** 3 / (12.0 * (1.0 - self.mu ** 2))


@dataclass(frozen=True)
class Load:
    kind: str = "uniform"
    p: float = 1e4
    L: float = 10.0

    def __post_init__(self):
        if self.kind not in ("uniform", "sinusoidal"):
            raise ValueError("load must be 'uniform' or 'sinusoidal'")

    def __call__(self, x, y):
        if self.kind == "uniform":
            return np.full(np.shape(x), self.p)
        k = 2.0 * np.pi / self.L
        return self.p * np.sin(k * x) * np.sin(k * y)


@dataclass(frozen=True)
class PlateProblem:
    mesh: ControlMesh
    load: Load = Load()
    material: Material = Material()
    policy: str = "cc"
    quadrature: int = QUADRATURE

    def __post_init__(self):
        if self.policy not in ("cc", "cup", "saddle", "auto"):
            raise ValueError("policy must be one of cc, cup, saddle, auto")
        V = self.mesh.vertices
        if np.abs(V[:, 2]).max(initial=0.0) > 1e-12:
            raise ValueError("plate control mesh must be planar (z = 0)")
        lo, hi = V[:, :2].min(axis=0), V[:, :2].max(axis=0)
        if not (np.allclose(lo, 0.0) and np.allclose(hi, self.load.L)):
            raise ValueError(f"plate must span [0, {self.load.L}]^2")


# ---------------------------------------------------------------- analytic

def analytic_solution(load, material, x, y, order=0, terms=99):
    """Navier solution of the simply supported square plate.

    Returns ``w`` and, for ``order >= 1``, ``(w_x, w_y)``; for ``order >= 2``
    also ``(w_xx, w_xy, w_yy)``. The uniform case sums odd ``m, n <= terms``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    D, L, p = material.D, load.L, load.p
    if load.kind == "sinusoidal":
        k = 2.0 * np.pi / L
        amp = p / (D * (2.0 * k * k) ** 2)
        sx, sy, cx, cy = np.sin(k * x), np.sin(k * y), np.cos(k * x), np.cos(k * y)
        out = [amp * sx * sy]
        if order >= 1:
            out.append(np.stack([amp * k * cx * sy, amp * k * sx * cy], -1))
        if order >= 2:
            out.append(np.stack([-amp * k * k * sx * sy, amp * k * k * cx * cy,
                                 -amp * k * k * sx * sy], -1))
        return tuple(out) if order else out[0]
    m = np.arange(1, terms + 1, 2, dtype=float)
    a = m * np.pi / L
    A, B = np.meshgrid(a, a, indexing="ij")
    M, N = np.meshgrid(m, m, indexing="ij")
    C = 16.0 * p / (np.pi ** 2 * D * M * N * (A * A + B * B) ** 2)
    shp = x.shape
    xf, yf = x.ravel(), y.ravel()
    Sx, Sy = np.sin(np.outer(xf, a)), np.sin(np.outer(yf, a))

    def combine(U, W, Cm):
        return np.einsum("pm,mn,pn->p", U, Cm, W).reshape(shp)

    out = [combine(Sx, Sy, C)]
    if order >= 1:
        Cx, Cy = np.cos(np.outer(xf, a)), np.cos(np.outer(yf, a))
        out.append(np.stack([combine(Cx, Sy, C * A), combine(Sx, Cy, C * B)], -1))
    if order >= 2:
        out.append(np.stack([combine(Sx, Sy, -C * A * A), combine(Cx, Cy, C * A * B),
                             combine(Sx, Sy, -C * B * B)], -1))
    return tuple(out) if order else out[0]


# ---------------------------------------------------------------- discretisation

@dataclass
class ElementGroup:
    """Elements sharing one parametric basis table."""

    ids: np.ndarray          # (G, n) augmented vertex ids
    N: np.ndarray            # (Q, n)
    D1: np.ndarray           # (Q, 2, n)
    D2: np.ndarray           # (Q, 3, n)
    wq: np.ndarray           # (Q,)
    faces: np.ndarray        # (G,) face ids of the level mesh
    ev: int | None = None


@dataclass
class EVInfo:
    ev: int
    valence: int
    patch: tuple            # 12v+1 augmented ids
    faces: dict             # (s, kind) -> face id


class Discretisation:
    """Level mesh, ghost ring, free DOFs and element classification."""

    def __init__(self, base, level):
        self.level = int(level)
        self.coarse = refine(base, level - 1) if level > 0 else None
        self.mesh = subdivide(self.coarse) if level > 0 else base
        gr = attach_ghosts(self.mesh)
        self.aug = gr.mesh
        self.reflect = gr.reflect
        top = self.mesh.topology
        self.free = np.nonzero(~top.boundary)[0]
        self.T = (gr.reflect[:, self.free]).tocsr()
        corners = {}
        for fi, f in enumerate(self.mesh.faces):
            corners[frozenset(int(x) for x in f)] = fi
        self.evs = []
        claimed = {}
        for e in top.extraordinary:
            try:
                lp = local_patch(self.aug, e)
            except MeshError as exc:
                raise MeshError(f"level {level}: {exc}; refine further") from exc
            v = lp.valence
            fmap = {}
            keys_to_id = dict(zip(ring_keys(v), lp.indices))
            for s in range(v):
                for kind, (i, j) in RING_FACES.items():
                    cs = frozenset(keys_to_id[canon(v, s, a, b)]
                                   for a, b in ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)))
                    fi = corners.get(cs)
                    if fi is None:
                        raise MeshError(f"level {level}: 2-ring of vertex {e + 1} leaves the plate")
                    if fi in claimed:
                        raise MeshError(f"level {level}: vertices {e + 1} and {claimed[fi] + 1} "
                                        "share a face of their 2-rings; refine further")
                    claimed[fi] = e
                    fmap[(s, kind)] = fi
            self.evs.append(EVInfo(e, v, lp.indices, fmap))
        grids = regular_grids(self.aug)[: self.mesh.n_faces]
        rest = np.ones(self.mesh.n_faces, dtype=bool)
        rest[list(claimed)] = False
        missing = np.nonzero(rest & (grids[:, 0] < 0))[0]
        if len(missing):
            raise MeshError(f"level {level}: face {missing[0] + 1} is neither regular nor "
                            "in the 2-ring of an extraordinary vertex")
        self.regular_faces = np.nonzero(rest)[0]
        self.regular_ids = grids[rest]
        self.n_free = len(self.free)
        self.n_aug = self.aug.n_vertices
        self.xy = self.aug.vertices[:, :2]

    def prolongation(self, weights):
        """Map from free values one level down to free values here, refining with ``weights``."""
        R = refinement_operator(self.coarse, weights).tocsr()
        coarse_free = np.nonzero(~self.coarse.topology.boundary)[0]
        return R[self.free][:, coarse_free].tocsr()

    def groups(self, weights, n=QUADRATURE):
        """Element groups for a :class:`WeightAssignment`."""
        pts, wts = piece_quadrature("regular", n)
        N, D1, D2 = bicubic_many(pts, 2)
        out = [ElementGroup(self.regular_ids, N, D1, D2, wts, self.regular_faces)]
        for info in self.evs:
            w = weights.get(info.ev, info.valence)
            nb = NeighbourhoodBasis(info.valence, w)
            patch = np.asarray(info.patch)
            for kind, p in nb.patches.items():
                pts, wts = piece_quadrature(p.kind, n)
                N, D1, D2 = p.evaluate_many(pts, 2)
                ids = np.array([patch[nb._index[(s, kind)]] for s in range(info.valence)])
                faces = np.array([info.faces[(s, kind)] for s in range(info.valence)])
                out.append(ElementGroup(ids, N, D1, D2, wts, faces, info.ev))
        return out


def _geometry(group, xy, sl):
    X = xy[group.ids[sl]]                                   # (G, n, 2)
    x = np.einsum("qn,gni->gqi", group.N, X)
    J = np.einsum("qkn,gni->gqki", group.D1, X)             # [k, i] = dx_i/deta_k
    G2 = np.einsum("qrn,gni->gqri", group.D2, X)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 1e-14):
        raise NumericalError("singular or inverted geometry Jacobian")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    return x, inv, G2, det


def _physical_hessian(group, inv, G2):
    """Second derivatives of every basis function in x: (G, Q, 3, n)."""
    grad = np.einsum("gqik,qkn->gqin", inv, group.D1)
    corr = group.D2[None] - np.einsum("gqri,gqin->gqrn", G2, grad)
    a11 = inv[..., 0, 0, None]
    a12 = inv[..., 0, 1, None]
    a21 = inv[..., 1, 0, None]
    a22 = inv[..., 1, 1, None]
    h11, h12, h22 = corr[:, :, 0], corr[:, :, 1], corr[:, :, 2]
    # H_x = inv H_eta inv^T on symmetric 2x2 matrices
    x11 = a11 * a11 * h11 + 2 * a11 * a12 * h12 + a12 * a12 * h22
    x12 = a11 * a21 * h11 + (a11 * a22 + a12 * a21) * h12 + a12 * a22 * h22
    x22 = a21 * a21 * h11 + 2 * a21 * a22 * h12 + a22 * a22 * h22
    return np.stack([x11, x12, x22], 2), grad


def _batches(G):
    for s in range(0, G, BATCH):
        yield slice(s, min(G, s + BATCH))


@dataclass
class FESolution:
    level: int
    disc: Discretisation = field(repr=False)
    weights: WeightAssignment
    w_free: np.ndarray = field(repr=False)
    problem: PlateProblem = field(repr=False)
    groups: list = field(repr=False, default_factory=list)

    @property
    def w_aug(self):
        return self.disc.T @ self.w_free

    @property
    def w(self):
        """Displacement per control vertex of the level mesh (boundary zeros)."""
        return self.w_aug[: self.disc.mesh.n_vertices]

    @property
    def n_dofs(self):
        return self.disc.n_free

    def corner_values(self):
        """Limit positions and deflections at the corners of regular faces."""
        N, _, _ = bicubic_many(np.zeros((1, 2)), 2)
        ids = self.disc.regular_ids
        xy = np.einsum("n,gni->gi", N[0], self.disc.xy[ids])
        return xy, self.w_aug[ids] @ N[0]

    def deflection_at(self, point, tol=1e-8):
        """Deflection at a physical point that is the corner of a regular face."""
        xy, w = self.corner_values()
        d = np.hypot(*(xy - np.asarray(point, dtype=float)).T)
        k = int(np.argmin(d))
        if d[k] > tol:
            raise ValueError(f"no regular face corner at {tuple(point)}")
        return float(w[k])


def assemble(problem, disc, weights):
    """Global stiffness and load over free DOFs, plus the element groups."""
    mat = problem.material
    mu = mat.mu
    Qm = np.array([[1.0, 0.0, mu], [0.0, 2.0 * (1.0 - mu), 0.0], [mu, 0.0, 1.0]])
    groups = disc.groups(weights, problem.quadrature)
    rows, cols, vals = [], [], []
    f = np.zeros(disc.n_aug)
    for g in groups:
        for sl in _batches(len(g.ids)):
            x, inv, G2, det = _geometry(g, disc.xy, sl)
            H, _ = _physical_hessian(g, inv, G2)
            dA = det * g.wq[None]
            QH = np.einsum("rs,gqsn->gqrn", Qm, H) * (mat.D * dA)[..., None, None]
            G, nq, _, n = H.shape
            Ke = np.matmul(H.reshape(G, nq * 3, n).transpose(0, 2, 1), QH.reshape(G, nq * 3, n))
            pe = np.einsum("gq,gq,qn->gn", dA, problem.load(x[..., 0], x[..., 1]), g.N)
            ids = g.ids[sl]
            rows.append(np.repeat(ids, n, axis=1).ravel())
            cols.append(np.tile(ids, (1, n)).ravel())
            vals.append(Ke.ravel())
            np.add.at(f, ids.ravel(), pe.ravel())
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(disc.n_aug, disc.n_aug)).tocsr()
    T = disc.T
    return (T.T @ K @ T).tocsc(), T.T @ f, groups


def assemble_solve(problem, level, weights=None, disc=None):
    """Solve the plate at ``level`` with per-vertex weights (classic by default)."""
    weights = weights if weights is not None else WeightAssignment()
    disc = disc if disc is not None else discretisation(problem.mesh, level)
    K, f, groups = assemble(problem, disc, weights)
    prolong = (lambda: disc.prolongation(weights)) if disc.level > 0 else None
    w = solve_spd(K, f, prolong)
    return FESolution(level, disc, weights, w, problem, groups)


def solve_spd(K, f, prolong=None, tol=RESIDUAL_TOL):
    """Solve a symmetric positive definite system to backward error ``tol``.

    The backward error is ``|Kw - f| / (|K| |w| + |f|)`` in max-norms; a
    residual relative to ``|f|`` alone cannot reach 1e-12 once the condition
    number passes about 1e4. Systems up to ``DIRECT_LIMIT`` unknowns are
    factorised directly and polished by iterative refinement. Larger ones use
    conjugate gradients preconditioned by a two-grid cycle, provided
    ``prolong`` (a callable giving the fine-from-coarse prolongation) is
    available; plain diagonal scaling stalls on fourth-order problems.
    """
    n = K.shape[0]
    diag = K.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise NumericalError("stiffness matrix has a non-positive diagonal")
    s = 1.0 / np.sqrt(diag)
    S = sp.diags(s)
    Ks = (S @ K @ S).tocsc()
    fs = s * f
    if n <= DIRECT_LIMIT or prolong is None:
        y = _direct(Ks, fs, tol)
    else:
        y = _cg(Ks, fs, _two_grid(Ks, S, prolong()), tol)
    w = s * y
    err = backward_error(K, w, f)
    if not np.all(np.isfinite(w)) or err > tol:
        raise NumericalError(f"linear solve did not converge (backward error {err:.2e})")
    log.debug("solved %d unknowns, backward error %.1e", n, err)
    return w


def backward_error(A, x, b):
    r = np.abs(A @ x - b).max()
    return r / (spla.norm(A, np.inf) * np.abs(x).max() + np.abs(b).max())


def _factor(A):
    try:
        return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                         options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NumericalError(f"factorisation failed: {exc}") from exc


def _direct(A, b, tol):
    lu = _factor(A)
    x = lu.solve(b)
    err = backward_error(A, x, b)
    for _ in range(REFINEMENT_STEPS):
        if err <= 0.01 * tol:
            break
        x_new = x + lu.solve(b - A @ x)
        e_new = backward_error(A, x_new, b)
        if e_new >= err:
            break
        x, err = x_new, e_new
    return x


def _cg(A, b, M, tol):
    guess = M @ b
    atol = 0.1 * tol * (spla.norm(A, np.inf) * np.abs(guess).max() + np.abs(b).max())
    x, info = spla.cg(A, b, rtol=0.0, atol=atol, maxiter=CG_MAXITER, M=M)
    if info != 0:
        raise NumericalError(f"conjugate gradients stopped after {CG_MAXITER} iterations "
                             f"(backward error {backward_error(A, x, b):.2e})")
    return x


def _two_grid(A, S, P):
    """Symmetric two-grid preconditioner for the diagonally scaled ``A``.

    ``P`` prolongs unscaled coarse values to unscaled fine values; smoothing
    is a Chebyshev polynomial in ``A`` and the coarse problem is factorised.
    """
    Ps = (sp.diags(1.0 / S.diagonal()) @ P).tocsr()
    Ac = (Ps.T @ A @ Ps).tocsc()
    lu = _factor(Ac)
    lmax = 1.1 * spla.eigsh(A, k=1, which="LA", tol=1e-2, return_eigenvectors=False)[0]
    lmin = lmax / 30.0
    th, de = 0.5 * (lmax + lmin), 0.5 * (lmax - lmin)

    def smooth(x, b):
        # Chebyshev iteration on A x = b over [lmin, lmax]
        r = b - A @ x
        d = r / th
        rho = de / th
        sigma = 1.0 / rho
        for _ in range(SMOOTHING):
            x = x + d
            r = r - A @ d
            rho_new = 1.0 / (2.0 * sigma - rho)
            d = rho_new * rho * d + (2.0 * rho_new / de) * r
            rho = rho_new
        return x

    def apply(b):
        x = smooth(np.zeros_like(b), b)
        x = x + Ps @ lu.solve(Ps.T @ (b - A @ x))
        return smooth(x, b)

    return spla.LinearOperator(A.shape, matvec=apply, dtype=float)


_DISC_CACHE = {}


def discretisation(mesh, level):
    key = (id(mesh), int(level))
    hit = _DISC_CACHE.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1]
    d = Discretisation(mesh, level)
    if len(_DISC_CACHE) > 16:
        _DISC_CACHE.clear()
    _DISC_CACHE[key] = (mesh, d)
    return d


# ---------------------------------------------------------------- errors

@dataclass(frozen=True)
class ErrorNorms:
    l2: float
    energy: float


def error_norms(sol, terms=99):
    """Relative L2 and energy-norm errors against the Navier solution."""
    prob = sol.problem
    w_aug = sol.w_aug
    num_l2 = den_l2 = num_e = den_e = 0.0
    for g in sol.groups:
        for sl in _batches(len(g.ids)):
            x, inv, G2, det = _geometry(g, sol.disc.xy, sl)
            H, _ = _physical_hessian(g, inv, G2)
            coeff = w_aug[g.ids[sl]]                          # (G, n)
            wh = np.einsum("qn,gn->gq", g.N, coeff)
            hh = np.einsum("gqrn,gn->gqr", H, coeff)
            w, _, hx = analytic_solution(prob.load, prob.material, x[..., 0], x[..., 1], 2, terms)
            dA = det * g.wq[None]
            d = hh - hx
            num_l2 += np.sum(dA * (wh - w) ** 2)
            den_l2 += np.sum(dA * w ** 2)
            num_e += np.sum(dA * energy_density(d[..., 0], d[..., 1], d[..., 2], prob.material.mu))
            den_e += np.sum(dA * energy_density(hx[..., 0], hx[..., 1], hx[..., 2], prob.material.mu))
    if den_l2 <= 0 or den_e <= 0:
        raise ValueError("reference solution has zero norm")
    return ErrorNorms(math.sqrt(num_l2 / den_l2), math.sqrt(max(num_e, 0.0) / den_e))


# ---------------------------------------------------------------- decomposition

@dataclass(frozen=True)
class ShapeDecomposition:
    ev: int
    valence: int
    k3: float
    k4: float
    k5: float
    R: float
    shape: str

    def row(self):
        return {"ev_id": self.ev + 1, "valence": self.valence, "k3": repr(self.k3),
                "k4": repr(self.k4), "k5": repr(self.k5), "R": repr(self.R),
                "chosen_shape": self.shape}


def cup_saddle_ratio(k3, k4, k5, mu=0.3):
    den = (k4 * k4 + k5 * k5) * (1.0 - mu)
    num = k3 * k3 * (1.0 + mu)
    if den == 0.0:
        return math.inf if num > 0 else 0.0
    return num / den


def decompose_patch(E, p, mu=0.3, ev=-1):
    """Cup/saddle coefficients of a ``(12v+1, 3)`` control block around an EV."""
    p = np.asarray(p, dtype=float)
    if p.shape != (E.right.shape[0], 3):
        raise ValueError(f"expected a ({E.right.shape[0]}, 3) control block")
    pc = p - E.left[:, 0] @ p
    t1, t2 = E.l1 @ pc, E.l2 @ pc
    cross = np.cross(t1, t2)
    norm = np.linalg.norm(cross)
    if norm < 1e-14:
        raise ValueError("tangent plane undefined")
    q = pc @ (cross / norm)
    k = []
    for j in (3, 4, 5):
        idx = E.shape_index(j)
        lj = E.left[:, idx]
        uj, _ = quadratic(j, E.r1, E.r2)
        k.append(float(lj @ q) / float(lj @ uj))
    R = cup_saddle_ratio(*k, mu)
    return ShapeDecomposition(ev, E.valence, k[0], k[1], k[2], R, "cup" if R > 1 else "saddle")


def decompose(sol, ev):
    """Classify the displacement near extraordinary vertex ``ev`` (0-based)."""
    info = next((i for i in sol.disc.evs if i.ev == int(ev)), None)
    if info is None:
        raise ValueError(f"vertex {int(ev) + 1} is not an interior extraordinary vertex")
    if info.valence < 5:
        raise ValueError("decomposition needs valence >= 5")
    E = eigensystem_for(info.valence, sol.weights.get(ev, info.valence))
    ids = list(info.patch)
    p = np.column_stack([sol.disc.xy[ids], sol.w_aug[ids]])
    return decompose_patch(E, p, sol.problem.material.mu, int(ev))


# ---------------------------------------------------------------- weight tables

_TABLE_FILE = "weights.csv"


class WeightTable:
    """Cup and saddle weights per valence; missing entries are tuned on demand."""

    def __init__(self, entries=None, source=None, tune_missing=True):
        self.entries = dict(entries or {})
        self.source = source
        self.tune_missing = tune_missing

    @classmethod
    def read(cls, path, tune_missing=True):
        from .tuner import read_weight_table
        return cls(read_weight_table(path), str(path), tune_missing)

    @classmethod
    def default(cls):
        from importlib import resources
        ref = resources.files("subdtune") / "data" / _TABLE_FILE
        with resources.as_file(ref) as path:
            return cls.read(path)

    def get(self, valence, shape):
        key = (int(valence), shape)
        if key not in self.entries:
            if not self.tune_missing:
                raise KeyError(f"no {shape} weights for valence {valence}")
            from .tuner import tune
            log.info("tuning %s weights for valence %d", shape, valence)
            self.entries[key] = tune(int(valence), shape)
        return self.entries[key].weights


def assignment(disc, table, shape_of):
    """Weights for every v >= 5 extraordinary vertex; ``shape_of(ev)`` gives cup/saddle."""
    out = {}
    for info in disc.evs:
        if info.valence >= 5:
            out[info.ev] = table.get(info.valence, shape_of(info.ev))
    return WeightAssignment(out)


@dataclass
class PipelineResult:
    solution: FESolution
    first_pass: FESolution | None
    decisions: list


def solve_policy(problem, level, table=None, disc=None):
    """Solve under ``problem.policy``; ``auto`` runs the two-pass pipeline."""
    disc = disc if disc is not None else discretisation(problem.mesh, level)
    if problem.policy == "cc":
        return PipelineResult(assemble_solve(problem, level, WeightAssignment(), disc), None, [])
    table = table if table is not None else WeightTable.default()
    if problem.policy in ("cup", "saddle"):
        wa = assignment(disc, table, lambda _: problem.policy)
        return PipelineResult(assemble_solve(problem, level, wa, disc), None, [])
    return auto_pipeline(problem, level, table, disc)


def auto_pipeline(problem, level, table=None, disc=None):
    """Cup weights first, classify each v >= 5 vertex, then re-solve."""
    table = table if table is not None else WeightTable.default()
    disc = disc if disc is not None else discretisation(problem.mesh, level)
    first = assemble_solve(problem, level, assignment(disc, table, lambda _: "cup"), disc)
    decisions = [decompose(first, i.ev) for i in disc.evs if i.valence >= 5]
    chosen = {d.ev: d.shape for d in decisions}
    for d in decisions:
        log.info("vertex %d: R = %.4g -> %s", d.ev + 1, d.R, d.shape)
    final = assemble_solve(problem, level, assignment(disc, table, chosen.__getitem__), disc)
    return PipelineResult(final, first, decisions)


# ---------------------------------------------------------------- convergence

def observed_rates(errors):
    """Rates from consecutive levels (mesh size halves per level)."""
    e = np.asarray(errors, dtype=float)
    r = np.full(len(e), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        r[1:] = np.log2(e[:-1] / e[1:])
    return r


@dataclass
class ErrorReport:
    policy: str
    levels: list
    n_dofs: list
    l2: list
    energy: list

    @property
    def rate_l2(self):
        return observed_rates(self.l2)

    @property
    def rate_energy(self):
        return observed_rates(self.energy)

    def rows(self):
        out = []
        for i, lev in enumerate(self.levels):
            out.append({"level": lev, "n_dofs": self.n_dofs[i], "policy": self.policy,
                        "l2_rel": repr(self.l2[i]), "energy_rel": repr(self.energy[i]),
                        "rate_l2": _fmt_rate(self.rate_l2[i]),
                        "rate_energy": _fmt_rate(self.rate_energy[i])})
        return out


def _fmt_rate(r):
    return "" if not np.isfinite(r) else repr(float(r))


def convergence_study(problem, levels, policies=("cc", "auto"), table=None):
    """Errors per level for each policy on CC-refined geometry."""
    reports = {p: ErrorReport(p, [], [], [], []) for p in policies}
    for lev in levels:
        disc = discretisation(problem.mesh, lev)
        for pol in policies:
            res = solve_policy(replace(problem, policy=pol), lev, table, disc)
            err = error_norms(res.solution)
            rep = reports[pol]
            rep.levels.append(int(lev))
            rep.n_dofs.append(res.solution.n_dofs)
            rep.l2.append(err.l2)
            rep.energy.append(err.energy)
    return reports


# ---------------------------------------------------------------- estimator

class PlateSolver(BaseEstimator):
    """Estimator facade over the plate pipeline.

    ``fit(mesh)`` solves at ``level`` under ``policy``; afterwards
    ``solution_``, ``decisions_`` (auto policy only) and ``errors_`` are set.
    ``predict(points)`` returns deflections at regular-face corner points and
    ``score`` is the negated relative energy error, so larger is better.
    """

    def __init__(self, load="uniform", level=3, policy="auto", weights=None,
                 quadrature=QUADRATURE, youngs_modulus=200e9, thickness=0.1,
                 poisson=0.3, pressure=1e4):
        self.load = load
        self.level = level
        self.policy = policy
        self.weights = weights
        self.quadrature = quadrature
        self.youngs_modulus = youngs_modulus
        self.thickness = thickness
        self.poisson = poisson
        self.pressure = pressure

    def _problem(self, mesh):
        if isinstance(mesh, (str, bytes)) or hasattr(mesh, "__fspath__"):
            from .mesh import load_mesh
            mesh = load_mesh(mesh)
        if not isinstance(mesh, ControlMesh):
            raise TypeError("fit expects a ControlMesh or a path to an OBJ file")
        if not 0 <= int(self.level) <= 6:
            raise ValueError("level must lie within 0..6")
        if not 2 <= int(self.quadrature) <= 8:
            raise ValueError("quadrature must lie within 2..8")
        mat = Material(self.youngs_modulus, self.thickness, self.poisson)
        return PlateProblem(mesh, Load(self.load, self.pressure), mat, self.policy,
                            int(self.quadrature))

    def _table(self):
        if self.weights is None:
            return WeightTable.default()
        if isinstance(self.weights, WeightTable):
            return self.weights
        return WeightTable.read(self.weights)

    def fit(self, X, y=None):
        problem = self._problem(X)
        res = solve_policy(problem, int(self.level), self._table())
        self.solution_ = res.solution
        self.decisions_ = res.decisions
        self.errors_ = error_norms(res.solution)
        self.n_dofs_ = res.solution.n_dofs
        return self

    def _check(self):
        if not hasattr(self, "solution_"):
            raise RuntimeError("PlateSolver is not fitted")

    def predict(self, X):
        self._check()
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.solution_.deflection_at(p) for p in pts])

    def score(self, X=None, y=None):
        self._check()
        return -self.errors_.energy
