"""Weight tuning against cup- and saddle-like quadratic shapes.

For a weight triple the characteristic map ``chi`` parameterises the 2-ring of
the extraordinary vertex. Quadratic fields lifted onto the characteristic
control net are refined by the subdivision scheme; the relative thin-plate
energy error of the resulting limit field is the objective of a one-parameter
search over the subdominant eigenvalue.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from sklearn.base import BaseEstimator

from .limit import NeighbourhoodBasis, chain_second, piece_quadrature
from .spectral import (
    SpectralError, block_eigenvalues, characteristic_mesh, default_weights,
    eigensystem_for,
)

log = logging.getLogger(__name__)

POISSON = 0.3
SHAPES = {"cup": 3, "saddle": 4}
RESID_TOL = 1e-10
INFEASIBLE_FLOOR = 1e-6


class InfeasibleError(ValueError):
    pass


def quadratic(j, x, y):
    """Exact quadratic ``u_j`` and its constant Hessian ``(u11, u12, u22)``."""
    if j == 3:
        return x * x + y * y, (2.0, 0.0, 2.0)
    if j == 4:
        return x * x - y * y, (2.0, 0.0, -2.0)
    if j == 5:
        return 2.0 * x * y, (0.0, 2.0, 0.0)
    raise ValueError("shape index must be 3, 4 or 5")


def energy_density(h11, h12, h22, mu=POISSON):
    """Thin-plate energy density from second derivatives."""
    return (h11 + h22) ** 2 - 2.0 * (1.0 - mu) * (h11 * h22 - h12 * h12)


@dataclass(frozen=True)
class QuadraticShape:
    index: int
    projection: float
    control: np.ndarray = field(repr=False)
    sampled: np.ndarray = field(repr=False)


def lift(E, j):
    """Project ``u_j`` sampled on the characteristic net onto its eigenspace.

    When the eigenvalue of ``u_j`` is repeated (valence 4) the projection uses
    the whole eigenspace, so the result does not depend on the chosen basis.
    """
    if j not in (3, 4, 5):
        raise ValueError("shape index must be 3, 4 or 5")
    u, _ = quadratic(j, E.r1, E.r2)
    k = E.shape_index(j)
    cluster = np.nonzero(np.abs(E.values - E.values[k]) < 1e-9)[0]
    coeff = E.left[:, cluster].T @ u
    ctrl = E.right[:, cluster] @ coeff
    proj = float(E.left[:, k] @ u)
    if np.abs(coeff).max() < 1e-8 * max(1.0, np.abs(u).max()):
        raise SpectralError("frequency mismatch")
    return QuadraticShape(j, proj, ctrl, u)


class _Quadrature:
    """Basis data of the 2-ring at Gauss points, reused for several fields."""

    def __init__(self, E, n):
        nb = NeighbourhoodBasis(E.valence, E.weights)
        N, D1, D2, W = [], [], [], []
        for face in nb.faces:
            pts, wts = piece_quadrature(nb.patches[face[1]].kind, n)
            W.append(wts)
            a, b, c = nb.dense_many(face, pts, 2)
            N.append(a)
            D1.append(b)
            D2.append(c)
        self.N = np.concatenate(N)
        self.D1 = np.concatenate(D1)
        self.D2 = np.concatenate(D2)
        self.weights = np.concatenate(W)
        P = np.column_stack([E.r1, E.r2])
        self.xy = self.N @ P
        self.jac = self.D1 @ P  # [q, k, i]
        self.geo2 = self.D2 @ P
        det = np.linalg.det(self.jac)
        if np.any(det <= 0):
            raise SpectralError("characteristic map not injective at a quadrature point")
        self.dA = self.weights * det

    def hessian(self, ctrl):
        f1 = self.D1 @ ctrl
        f2 = self.D2 @ ctrl
        _, H = chain_second(self.jac, self.geo2, f1, f2)
        return H


def energy_parts(v, alpha, beta, gamma, j, n=4, field_fn=None):
    """Squared energy norms ``(|u_h - u|^2, |u|^2)`` over the 2-ring image of ``chi``.

    ``field_fn(E) -> (control_values, exact_hessian)`` swaps in another field
    with a constant exact Hessian; by default the lifted ``u_j`` is used.
    """
    E = eigensystem_for(int(v), (float(alpha), float(beta), float(gamma)))
    characteristic_mesh(E)
    q = _Quadrature(E, n)
    if field_fn is None:
        ctrl = lift(E, j).control
        _, exact = quadratic(j, 0.0, 0.0)
    else:
        ctrl, exact = field_fn(E)
    H = q.hessian(ctrl)
    diff = H - np.asarray(exact, dtype=float)
    num = float(np.sum(q.dA * energy_density(diff[:, 0], diff[:, 1], diff[:, 2])))
    den = float(np.sum(q.dA * energy_density(*exact)))
    return num, den


def energy_error(v, alpha, beta, gamma, j, n=4):
    """Relative thin-plate energy error of the lifted quadratic ``u_j``."""
    num, den = energy_parts(v, alpha, beta, gamma, j, n)
    return math.sqrt(max(num, 0.0) / den)


def _eig_values(v, a, b, g):
    w = (a, b, g)
    lam1 = block_eigenvalues(v, w, 1)[0].real
    lam3 = block_eigenvalues(v, w, 0)[1].real
    lam4 = block_eigenvalues(v, w, 2 if v > 3 else 1)[0 if v > 3 else 1].real
    return lam1, lam3, lam4


def constraint_residuals(v, alpha, beta, gamma, lam, mode="relaxed"):
    lam1, lam3, lam4 = _eig_values(v, alpha, beta, gamma)
    if mode == "relaxed":
        return np.array([lam1 - lam, lam3 - lam1 ** 2, beta - gamma])
    return np.array([lam1 - lam, lam4 - lam1 ** 2, lam3 - lam1 ** 2])


def solve_constraints(lam, v, mode="relaxed", guess=None):
    """Weights ``(alpha, beta, gamma)`` meeting the eigenvalue constraints at ``lam``.

    Relaxed mode ties ``beta = gamma``. Unknowns are solved in log space, so
    the weights stay positive.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    v = int(v)
    if v < 3:
        raise ValueError("valence must be at least 3")
    if mode not in ("relaxed", "full"):
        raise ValueError("mode must be 'relaxed' or 'full'")
    x0 = np.log(np.asarray(guess if guess is not None else default_weights(v), dtype=float))

    if mode == "relaxed":
        def F(x):
            a, b = np.exp(x)
            return constraint_residuals(v, a, b, b, lam, mode)[:2]
        start = x0[:2]
    else:
        def F(x):
            a, b, g = np.exp(x)
            return constraint_residuals(v, a, b, g, lam, mode)
        start = x0

    sol = scipy.optimize.root(F, start, method="hybr", options={"xtol": 1e-13})
    x = sol.x
    res = np.abs(F(x)).max()
    if res > RESID_TOL:
        ls = scipy.optimize.least_squares(F, x, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        x, res = ls.x, np.abs(ls.fun).max()
    if res > INFEASIBLE_FLOOR or not np.all(np.isfinite(x)):
        raise InfeasibleError(
            f"infeasible: complex weights (residual floor {res:.2e} at lambda={lam})")
    if res > RESID_TOL:
        log.warning("constraint residual %.2e above tolerance at lambda=%g", res, lam)
    w = np.exp(x)
    if mode == "relaxed":
        return float(w[0]), float(w[1]), float(w[1])
    return tuple(float(t) for t in w)


@dataclass(frozen=True)
class TunedWeights:
    valence: int
    shape: str
    lam: float
    alpha: float
    beta: float
    gamma: float
    error: float
    residuals: tuple = ()
    mode: str = "relaxed"

    @property
    def weights(self):
        return (self.alpha, self.beta, self.gamma)


def _golden(f, a, b, tol):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def error_curve(v, shape, lambdas, mode="relaxed", n=4):
    """``(lambda, alpha, beta, gamma, error)`` rows, warm-starting along the grid."""
    j = SHAPES[shape] if isinstance(shape, str) else int(shape)
    rows = []
    guess = None
    for lam in lambdas:
        try:
            w = solve_constraints(float(lam), v, mode, guess)
        except InfeasibleError:
            rows.append((float(lam), math.nan, math.nan, math.nan, math.nan))
            continue
        guess = w
        try:
            err = energy_error(v, *w, j, n)
        except SpectralError:
            err = math.nan
        rows.append((float(lam), *w, err))
    return rows


def tune(v, shape, lo=0.45, hi=0.75, step=0.005, tol=1e-4, n=4):
    """Minimise the energy error over the subdominant eigenvalue (relaxed mode)."""
    v = int(v)
    if v < 5:
        raise ValueError(f"not tuned: valence {v} keeps the classic weights")
    if shape not in SHAPES:
        raise ValueError("shape must be 'cup' or 'saddle'")
    j = SHAPES[shape]
    grid = np.round(np.arange(lo, hi + step / 2, step), 10)
    rows = error_curve(v, shape, grid, "relaxed", n)
    errs = np.array([r[4] for r in rows])
    if not np.any(np.isfinite(errs)):
        raise InfeasibleError("infeasible: no admissible lambda on the grid")
    k = int(np.nanargmin(errs))
    guess = rows[k][1:4]
    cache = {}

    def f(lam):
        if lam not in cache:
            w = solve_constraints(lam, v, "relaxed", guess)
            cache[lam] = (energy_error(v, *w, j, n), w)
        return cache[lam][0]

    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    lam, err = _golden(f, a, b, tol)
    if errs[k] < err:
        lam, err, w = float(grid[k]), float(errs[k]), tuple(rows[k][1:4])
    else:
        w = cache[lam][1]
    res = constraint_residuals(v, *w, lam, "relaxed")
    return TunedWeights(v, shape, float(lam), *w, float(err),
                        tuple(float(r) for r in res), "relaxed")


WEIGHT_COLUMNS = ("valence", "shape", "alpha", "beta", "gamma", "lambda",
                  "rel_energy_error", "mode")


def weight_rows(tuned):
    return [{"valence": t.valence, "shape": t.shape, "alpha": repr(t.alpha),
             "beta": repr(t.beta), "gamma": repr(t.gamma), "lambda": repr(t.lam),
             "rel_energy_error": repr(t.error), "mode": t.mode} for t in tuned]


def read_weight_table(path):
    """Parse a weight table into ``{(valence, shape): TunedWeights}``."""
    out = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(WEIGHT_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"weight table lacks columns: {sorted(missing)}")
    for row in reader:
        t = TunedWeights(int(row["valence"]), row["shape"], float(row["lambda"]),
                         float(row["alpha"]), float(row["beta"]), float(row["gamma"]),
                         float(row["rel_energy_error"]), (), row["mode"])
        if min(t.weights) <= 0:
            raise ValueError(f"non-positive weights for valence {t.valence}")
        out[(t.valence, t.shape)] = t
    return out


class WeightTuner(BaseEstimator):
    """Estimator wrapper: ``fit`` tunes each requested valence and shape.

    After fitting, ``weights_`` maps ``(valence, shape)`` to :class:`TunedWeights`
    and ``predict`` returns the weight triple for a valence/shape pair.
    """

    def __init__(self, valences=(5,), shapes=("cup", "saddle"), step=0.005, tol=1e-4,
                 quadrature=4):
        self.valences = valences
        self.shapes = shapes
        self.step = step
        self.tol = tol
        self.quadrature = quadrature

    def fit(self, X=None, y=None):
        vals = self.valences if X is None else [int(v) for v in np.ravel(X)]
        self.weights_ = {}
        for v in vals:
            for s in self.shapes:
                self.weights_[(v, s)] = tune(v, s, step=self.step, tol=self.tol,
                                             n=self.quadrature)
        return self

    def predict(self, X, shape="cup"):
        if not hasattr(self, "weights_"):
            raise RuntimeError("WeightTuner is not fitted")
        out = []
        for v in np.ravel(X):
            v = int(v)
            if v < 5:
                out.append(default_weights(v))
            else:
                out.append(self.weights_[(v, shape)].weights)
        return np.array(out)

    def table(self):
        return weight_rows(self.weights_.values())
