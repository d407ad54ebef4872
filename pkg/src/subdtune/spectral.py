"""Local subdivision matrix, its Fourier block structure and eigensystem.

The subdivision matrix maps the ``12v+1`` points of the 3-neighbourhood of an
extraordinary vertex at one level to the same points one level finer. Its
block-circulant structure lets a discrete Fourier transform split it into one
13x13 block (rotation frequency 0, with the vertex itself) and ``v-1`` blocks
of size 12x12.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .stencils import StencilRules, ring_index, ring_keys

log = logging.getLogger(__name__)

COND_MAX = 1e12
EQ_RTOL = 1e-8


class SpectralError(ValueError):
    pass


def default_weights(v):
    return (float(v * (v - 2)), 1.0, 1.0)


@dataclass(frozen=True)
class SubdivisionMatrix:
    valence: int
    weights: tuple
    matrix: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.matrix.shape[0]


@lru_cache(maxsize=256)
def _assemble_cached(v, alpha, beta, gamma):
    keys = ring_keys(v)
    M = StencilRules(v, alpha, beta, gamma).matrix(keys, keys)
    M.setflags(write=False)
    return M


def assemble(v, alpha=None, beta=1.0, gamma=1.0):
    """Build the ``(12v+1)^2`` subdivision matrix for weights ``(alpha, beta, gamma)``."""
    v = int(v)
    if v < 3:
        raise ValueError("valence must be at least 3")
    if alpha is None:
        alpha = v * (v - 2)
    w = (float(alpha), float(beta), float(gamma))
    if min(w) <= 0:
        raise ValueError("weights must be strictly positive")
    S = _assemble_cached(v, *w)
    assert np.allclose(S.sum(axis=1), 1.0, atol=1e-12)
    return SubdivisionMatrix(v, w, S)


def dft_matrix(v):
    """Extended DFT matrix: identity on the vertex, scaled blocks ``w^(m s) I`` elsewhere.

    The inverse is the complex conjugate.
    """
    n = 12 * v + 1
    omega = np.exp(2j * np.pi / v)
    F = np.zeros((n, n), dtype=complex)
    F[0, 0] = 1.0
    phase = omega ** np.outer(np.arange(v), np.arange(v)) / np.sqrt(v)
    F[1:, 1:] = np.kron(phase, np.eye(12))
    return F


def block_slice(v, m):
    if m == 0:
        return slice(0, 13)
    return slice(1 + 12 * m, 13 + 12 * m)


@dataclass(frozen=True)
class FourierBlocks:
    valence: int
    F: np.ndarray = field(repr=False)
    transformed: np.ndarray = field(repr=False)
    blocks: tuple = field(repr=False)
    off_block_residual: float = 0.0

    @property
    def sizes(self):
        return [b.shape[0] for b in self.blocks]

    def block_eigenvalues(self, m):
        ev = scipy.linalg.eigvals(self.blocks[m])
        return ev[np.lexsort((-ev.imag, -ev.real))]


def _fourier(v, S):
    F = dft_matrix(v)
    T = F @ S @ F.conj()
    mask = np.ones(T.shape, dtype=bool)
    blocks = []
    for m in range(v):
        sl = block_slice(v, m)
        blocks.append(T[sl, sl].copy())
        mask[sl, sl] = False
    # block 0 overlaps the vertex row/col only
    return F, T, tuple(blocks), float(np.abs(T[mask]).max(initial=0.0))


def fourier_blocks(S):
    """Block-diagonalise ``S`` by the extended DFT."""
    v = S.valence
    F, T, blocks, resid = _fourier(v, S.matrix)
    if resid > 1e-8:
        raise SpectralError(f"ordering mismatch: off-block residual {resid:.3e}")
    return FourierBlocks(v, F, T, blocks, resid)


@lru_cache(maxsize=4096)
def _block_values(v, weights, m):
    S = _assemble_cached(v, *weights)
    F = dft_matrix(v)
    sl = block_slice(v, m)
    # only the rows/cols of block m are needed
    B = F[sl] @ S @ F.conj()[:, sl]
    ev = scipy.linalg.eigvals(B)
    return ev[np.argsort(-ev.real, kind="stable")]


def block_eigenvalues(v, weights, m):
    """Eigenvalues of Fourier block ``m`` in descending order (cached)."""
    return _block_values(int(v), tuple(float(w) for w in weights), int(m))


def subdominant_value(v, weights):
    return float(block_eigenvalues(v, weights, 1)[0].real)


def cup_value(v, weights):
    """Largest eigenvalue of block 0 after the unit eigenvalue."""
    return float(block_eigenvalues(v, weights, 0)[1].real)


def saddle_value(v, weights):
    """Largest eigenvalue of the rotation-frequency-2 block."""
    if v == 3:
        return float(block_eigenvalues(v, weights, 1)[1].real)
    return float(block_eigenvalues(v, weights, 2)[0].real)



def _null(A, k):
    _, sv, Vh = np.linalg.svd(A)
    return Vh[-k:].conj().T, sv


def _block_eigen(B, m):
    """Eigenvalues (descending), right vectors and left rows with ``Lh @ R = I``.

    Repeated eigenvalues are grouped and their eigenspaces taken from SVD null
    spaces, which stays well conditioned where a plain eigenvector solve does not.
    """
    n = B.shape[0]
    w = scipy.linalg.eigvals(B)
    if np.abs(w.imag).max() > 1e-9:
        raise SpectralError(f"complex eigenvalues in block {m}")
    w = np.sort(w.real)[::-1]
    scale = max(1.0, np.abs(w).max())
    groups = []
    for x in w:
        if groups and abs(groups[-1][-1] - x) < 1e-6 * scale:
            groups[-1].append(x)
        else:
            groups.append([x])
    vals, Rs = [], []
    for g in groups:
        mu, k = float(np.mean(g)), len(g)
        if abs(mu) < 1e-9 * scale:
            # the nilpotent part may carry Jordan chains; use the generalized
            # eigenspace, which vanishes after k steps anyway
            mu = 0.0
            A = B.copy()
            for _ in range(k - 1):
                if np.linalg.svd(A, compute_uv=False)[n - k] <= 1e-9 * scale:
                    break
                A = B @ A
        else:
            A = B - mu * np.eye(n)
        Rc, sv = _null(A, k)
        Lc, _ = _null(A.T, k)
        if sv[n - k] > 1e-7 * scale:
            raise SpectralError(f"non-diagonalizable block {m} (eigenvalue {mu:.6g})")
        if np.linalg.cond(Lc.T @ Rc) > COND_MAX:
            raise SpectralError(f"non-diagonalizable block {m} (eigenvalue {mu:.6g})")
        vals += [mu] * k
        Rs.append(Rc)
    R = np.hstack(Rs)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SpectralError(f"non-diagonalizable block {m} (cond {cond:.2e})")
    # inverting the assembled basis makes cross-cluster pairings exact
    Lh = np.linalg.inv(R)
    return np.array(vals), R, Lh


@dataclass(frozen=True)
class EigenStructure:
    """Sorted, real, bi-orthonormal eigensystem of a subdivision matrix.

    ``right[:, j]`` and ``left[:, j]`` satisfy ``left.T @ right = I``. The
    subdominant pair is normalised so that the first edge neighbour of sector 0
    maps to ``(1, 0)``; ``r1 + i r2`` then rotates by ``+2 pi / v`` per sector.
    """

    valence: int
    weights: tuple
    values: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    frequency: np.ndarray = field(repr=False)
    subdominant: tuple = (1, 2)
    cup: int = 3
    saddle: tuple | None = None

    @property
    def r1(self):
        return self.right[:, self.subdominant[0]]

    @property
    def r2(self):
        return self.right[:, self.subdominant[1]]

    @property
    def l1(self):
        return self.left[:, self.subdominant[0]]

    @property
    def l2(self):
        return self.left[:, self.subdominant[1]]

    @property
    def lambda1(self):
        return float(self.values[self.subdominant[0]])

    @property
    def lambda_cup(self):
        return float(self.values[self.cup])

    @property
    def lambda_saddle(self):
        return None if self.saddle is None else float(self.values[self.saddle[0]])

    def shape_index(self, j):
        """Eigen index carrying quadratic shape ``j`` in {3, 4, 5}."""
        if j == 3:
            return self.cup
        if self.saddle is None:
            raise SpectralError("no frequency-2 pair for this valence")
        return self.saddle[j - 4]


def _realify(z, lz):
    return (z.real, z.imag), (2.0 * lz.real, -2.0 * lz.imag)


def eigensystem(S):
    """Eigendecomposition of ``S`` assembled from its Fourier blocks."""
    v = S.valence
    n = 12 * v + 1
    F, T, blocks, resid = _fourier(v, S.matrix)
    if resid > 1e-8:
        raise SpectralError(f"ordering mismatch: off-block residual {resid:.3e}")
    Finv = F.conj()

    entries = []  # (lambda, m, k, r, l)

    def full(m, x):
        y = np.zeros(n, dtype=complex)
        y[block_slice(v, m)] = x
        return y

    def solve_block(m):
        return _block_eigen(blocks[m], m)

    half = v // 2
    for m in range(0, half + 1):
        w, R, Lh = solve_block(m)
        for k in range(len(w)):
            r = Finv @ full(m, R[:, k])
            l = F.T @ full(m, Lh[k])
            if m == 0 or (v % 2 == 0 and m == half):
                r, l = r.real, l.real
                i = int(np.argmax(np.abs(r)))
                c = 1.0 / r[i] if (m == 0 and k == 0) else np.sign(r[i]) / np.abs(r).max()
                entries.append((w[k], m, k, r * c, l / c))
                continue
            z, lz = r.conj(), l.conj()
            if k == 0 and m == 1:
                c = 1.0 / z[1]
            else:
                i = int(np.argmax(np.abs(z)))
                c = np.abs(z[i]) / z[i] / np.abs(z).max()
            z, lz = z * c, lz / c
            entries.append((w[k], m, k, z, lz))

    # phase of the frequency-2 pair is fixed against (r1 + i r2)^2
    z1 = next(e for e in entries if e[1] == 1 and e[2] == 0)[3]
    if v >= 5:
        for idx, e in enumerate(entries):
            if e[1] == 2 and e[2] == 0:
                proj = e[4] @ (z1 * z1)
                c = proj / np.abs(proj)
                entries[idx] = (e[0], e[1], e[2], e[3] * c, e[4] / c)

    vals, freqs, ks, Rs, Ls = [], [], [], [], []
    for lam, m, k, r, l in entries:
        if np.iscomplexobj(r):
            (ra, rb), (la, lb) = _realify(r, l)
            for rr, ll, mm in ((ra, la, m), (rb, lb, v - m)):
                vals.append(lam); freqs.append(mm); ks.append(k); Rs.append(rr); Ls.append(ll)
        else:
            vals.append(lam); freqs.append(m); ks.append(k); Rs.append(r); Ls.append(l)

    vals = np.array(vals)
    freqs = np.array(freqs)
    ks = np.array(ks)
    order = np.lexsort((ks, freqs, -np.round(vals, 10)))
    vals, freqs, ks = vals[order], freqs[order], ks[order]
    R = np.column_stack([Rs[i] for i in order])
    L = np.column_stack([Ls[i] for i in order])

    def find(m, k):
        hit = np.nonzero((freqs == m) & (ks == k))[0]
        return int(hit[0])

    sub = (find(1, 0), find(v - 1, 0))
    cup = find(0, 1)
    if v >= 5:
        saddle = (find(2, 0), find(v - 2, 0))
    elif v == 4:
        saddle = (find(2, 0), find(2, 1))
    else:
        saddle = None
    if vals[sub[0]] < vals.max(initial=0) and sub[0] != 1:
        warnings.warn("C1 structure violated: subdominant eigenvalue not from frequency-1 blocks")
    return EigenStructure(v, S.weights, vals, R, L, freqs, sub, cup, saddle)


@lru_cache(maxsize=256)
def eigensystem_for(v, weights):
    """Cached eigensystem for valence ``v`` and weight triple."""
    return eigensystem(assemble(v, *weights))


@dataclass(frozen=True)
class CharacteristicMesh:
    valence: int
    coords: np.ndarray = field(repr=False)  # (12v+1, 2)
    scale: float = 1.0

    def vertex(self, s, a, b):
        return self.coords[ring_index(self.valence, (s % self.valence, a, b))]


def characteristic_mesh(E):
    """Planar control net ``[r1 r2]`` of the 3-neighbourhood."""
    v = E.valence
    i1, i2 = E.subdominant
    l1, l2 = E.values[i1], E.values[i2]
    if abs(l1 - l2) > 1e-8 or set(E.frequency[[i1, i2]]) != {1, v - 1}:
        raise SpectralError("not C1-tunable")
    others = np.delete(E.values, [0, i1, i2])
    if others.size and others.max() >= l1 - 1e-12:
        raise SpectralError("not C1-tunable")
    P = np.column_stack([E.r1, E.r2])
    d = np.hypot(*P[1])
    return CharacteristicMesh(v, P / d, d)


@dataclass
class SmoothnessReport:
    valence: int
    lambdas: dict
    c1_holds: bool
    c1_residual: float
    c2_holds: bool
    c2_residuals: dict
    frequency_ok: bool
    injective: bool | None = None
    min_jacobian: float | None = None

    def summary(self):
        lines = [f"valence {self.valence}"]
        for k, val in self.lambdas.items():
            lines.append(f"  {k} = {val:.10f}")
        lines.append(f"  C1 (lambda1 = lambda2 > lambda3): {'holds' if self.c1_holds else 'fails'}"
                     f"  residual {self.c1_residual:.3e}")
        for k, r in self.c2_residuals.items():
            lines.append(f"  C2 residual {k}: {r:.3e}")
        lines.append(f"  C2 necessary condition: {'holds' if self.c2_holds else 'fails'}")
        lines.append(f"  frequency labels consistent: {self.frequency_ok}")
        if self.injective is not None:
            lines.append(f"  characteristic map regular: {self.injective}"
                         f" (min Jacobian {self.min_jacobian:.4e})")
        return "\n".join(lines)


def smoothness_report(E, check_injectivity=True):
    """Diagnostics of the C1 and necessary C2 eigenvalue conditions."""
    v = E.valence
    i1, i2 = E.subdominant
    lam1, lam2 = E.values[i1], E.values[i2]
    lam_cup = E.values[E.cup]
    rest = np.delete(E.values, [0, i1, i2])
    lam3 = rest.max(initial=0.0)
    c1_res = abs(lam1 - lam2) / lam1
    c1 = c1_res < EQ_RTOL and lam1 > lam3
    lambdas = {"lambda0": E.values[0], "lambda1": lam1, "lambda2": lam2, "lambda_cup": lam_cup}
    c2 = {"lambda_cup - lambda1^2": abs(lam_cup - lam1 ** 2) / lam1 ** 2}
    freq_ok = set(E.frequency[[i1, i2]]) == {1, v - 1} and E.frequency[E.cup] == 0
    if E.saddle is not None:
        ls = E.values[E.saddle[0]]
        lambdas["lambda_saddle"] = ls
        c2["lambda_saddle - lambda1^2"] = abs(ls - lam1 ** 2) / lam1 ** 2
        c2["lambda_saddle pair"] = abs(E.values[E.saddle[0]] - E.values[E.saddle[1]]) / lam1 ** 2
        # the triple must dominate everything below it
        below = np.delete(E.values, [0, i1, i2, E.cup, *E.saddle])
        c2["gap"] = 0.0 if below.max(initial=0.0) < lam1 ** 2 * (1 - EQ_RTOL) else 1.0
    c2_ok = all(r < EQ_RTOL for r in c2.values()) and E.saddle is not None
    rep = SmoothnessReport(v, lambdas, bool(c1), float(c1_res), bool(c2_ok), c2, bool(freq_ok))
    if check_injectivity and c1:
        from .limit import NeighbourhoodBasis, gauss_points
        nb = NeighbourhoodBasis(v, E.weights)
        P = np.column_stack([E.r1, E.r2])
        pts, _ = gauss_points(4)
        jmin = np.inf
        for face in nb.faces:
            for eta in pts:
                res = nb.dense(face, eta, 1)
                J = res.d1 @ P
                jmin = min(jmin, np.linalg.det(J))
        rep.injective = bool(jmin > 0)
        rep.min_jacobian = float(jmin)
    return rep


def spectrum_rows(E):
    """``(j, lambda, frequency_m)`` rows in sorted order."""
    return [(j, float(lam), int(m)) for j, (lam, m) in enumerate(zip(E.values, E.frequency))]
