"""Invariant manifold charts by the parameterization method.

A chart is a truncated power series ``P: R^m -> R^n`` solving
``f(P(s)) = P(Lambda s)`` with ``Lambda`` the diagonal action of the chosen
multipliers. The degree ``k`` coefficients solve the homological equations

    (Df(p) - lambda^alpha I) P_alpha = -[f(P_{<k})]_alpha ,   |alpha| = k,

so lower orders never change when ``K`` grows. The same code computes the
stable chart (stable multipliers), the unstable chart and, with all
multipliers, a local linearizing chart of a whole neighbourhood.

Coefficients are dense arrays of shape ``(n,) + (K+1,)*m`` holding floats
or ``mpmath.mpf`` objects (high precision mode); entries of total degree
above ``K`` are always zero.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    InputError,
    InternalResonanceError,
    NotAGraphError,
    NotFoundError,
)
from .mapcore import (
    AnalyticMap,
    Saddle,
    classify_saddle,
    eval_inverse,
    eval_map,
    find_fixed_point,
    is_mp,
    jacobian,
    to_mp,
)
from .polynomial import monomials_up_to

log = logging.getLogger(__name__)

MAX_ORDER = 200
SMALL_DIVISOR_TOL = 1e-10
RESIDUAL_TOL = 1e-10
ADMISSIBILITY_TOL = 1e-8
MAX_SPACING = 1e-3


# --------------------------------------------------------------------------
# truncated power series


def _degree_grid(m: int, K: int) -> np.ndarray:
    axes = np.meshgrid(*[np.arange(K + 1)] * m, indexing="ij")
    return np.sum(axes, axis=0) if m else np.zeros(())


def _series_mul(a, b, K: int, mask):
    """Product of two series truncated to total degree ``K``."""
    m = a.ndim
    if m == 1:
        return np.convolve(a, b)[: K + 1]
    out = np.zeros_like(a)
    for idx in np.argwhere(a != 0):
        if idx.sum() > K:
            continue
        dst = tuple(slice(i, None) for i in idx)
        src = tuple(slice(0, K + 1 - i) for i in idx)
        out[dst] = out[dst] + a[tuple(idx)] * b[src]
    out[~mask] = 0
    return out


def _compose(polys, P, K: int, mask):
    """``[f_i(P)]`` truncated at degree ``K`` for numeric (exps, coeffs) lists."""
    n = len(P)
    one = np.zeros_like(P[0])
    one[(0,) * P[0].ndim] = 1
    powers = {}

    def power(i, e):
        if e == 0:
            return one
        key = (i, e)
        if key not in powers:
            powers[key] = P[i] if e == 1 else _series_mul(power(i, e - 1), P[i], K, mask)
        return powers[key]

    out = []
    for exps, coeffs in polys:
        acc = np.zeros_like(P[0])
        for e, c in zip(exps, coeffs):
            term = None
            for i in range(n):
                if e[i]:
                    pw = power(i, e[i])
                    term = pw if term is None else _series_mul(term, pw, K, mask)
            acc = acc + (c * one if term is None else c * term)
        out.append(acc)
    return out


def _eval_series(C, s):
    """Evaluate float coefficients ``C`` (n, K+1, ...) at points ``s`` (npts, m)."""
    m = C.ndim - 1
    K = C.shape[1] - 1
    pw = [np.vander(s[:, j], K + 1, increasing=True) for j in range(m)]
    out = np.einsum("...a,pa->p...", C, pw[m - 1])
    for j in reversed(range(m - 1)):
        out = np.einsum("p...a,pa->p...", out, pw[j])
    return out


def _derivative_coeffs(C, j: int):
    """Coefficients of d/ds_j of the series ``C``."""
    axis = j + 1
    K = C.shape[axis] - 1
    D = np.zeros_like(C)
    src = [slice(None)] * C.ndim
    dst = [slice(None)] * C.ndim
    src[axis] = slice(1, K + 1)
    dst[axis] = slice(0, K)
    factors = np.arange(1, K + 1).reshape([-1 if a == axis else 1 for a in range(C.ndim)])
    D[tuple(dst)] = C[tuple(src)] * factors
    return D


# --------------------------------------------------------------------------
# charts


@dataclass(frozen=True, eq=False)
class ManifoldChart:
    """Truncated parameterization ``P`` of an invariant manifold.

    ``side`` is ``"stable"``, ``"unstable"`` or ``"full"`` (all multipliers:
    a local linearizing chart). ``precision`` is ``None`` for double
    precision, otherwise the decimal digits used.
    """

    side: str
    order: int
    point: object
    multipliers: tuple
    vectors: np.ndarray
    coeffs: np.ndarray
    validity_radius: float
    residual: float
    precision: Optional[int] = None
    map_name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return len(self.multipliers)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def rescaled(self, factor) -> "ManifoldChart":
        """Chart ``z -> P(factor * z)``: coefficients times ``factor^|alpha|``, radius divided by ``factor``.

        A power-of-two ``factor`` keeps every coefficient exact.
        """
        grid = np.indices(self.coeffs.shape[1:]).sum(axis=0)
        if self.precision is not None:
            with mpmath.workdps(self.precision):
                f = mpmath.mpf(factor)
                powers = np.vectorize(lambda k: f**int(k), otypes=[object])(grid)
                coeffs = self.coeffs * powers[None, ...]
        else:
            coeffs = self.coeffs * (float(factor) ** grid)[None, ...]
        return ManifoldChart(self.side, self.order, self.point, self.multipliers,
                             np.asarray(self.vectors) * float(factor), coeffs,
                             self.validity_radius / float(factor), self.residual, self.precision,
                             self.map_name)

    def coefficient(self, alpha: Sequence[int]):
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.m:
            raise InputError("multi-index has wrong length")
        if sum(alpha) > self.order:
            return np.zeros(self.dim)
        return self.coeffs[(slice(None),) + alpha]

    def terms(self, tol: float = 0.0) -> list:
        """Nonzero ``(alpha, vector)`` pairs in graded order."""
        out = []
        for alpha in monomials_up_to(self.m, self.order):
            v = self.coeffs[(slice(None),) + alpha]
            if any(abs(c) > tol for c in v):
                out.append((alpha, v))
        return out

    @property
    def float_coeffs(self) -> np.ndarray:
        if "float" not in self._cache:
            self._cache["float"] = np.asarray(
                [float(c) for c in self.coeffs.ravel()], dtype=float).reshape(self.coeffs.shape)
        return self._cache["float"]

    def _as_points(self, s):
        s = np.asarray(s, dtype=float)
        single = s.ndim == 0 or (s.ndim == 1 and self.m > 1)
        s = s.reshape(-1, self.m) if s.ndim <= 1 else s
        return s, single

    def evaluate(self, s):
        """``P(s)``. Float input: scalar/vector or ``(npts, m)`` array; mpf list: one point."""
        if isinstance(s, (list, tuple)) and s and isinstance(s[0], mpmath.mpf):
            return self._evaluate_mp(list(s))
        pts, single = self._as_points(s)
        out = _eval_series(self.float_coeffs, pts)
        return out[0] if single else out

    def derivative(self, s):
        """``DP(s)`` as ``(n, m)`` (single point) or ``(npts, n, m)``."""
        if isinstance(s, (list, tuple)) and s and isinstance(s[0], mpmath.mpf):
            return self._derivative_mp(list(s))
        pts, single = self._as_points(s)
        if "dfloat" not in self._cache:
            self._cache["dfloat"] = [_derivative_coeffs(self.float_coeffs, j) for j in range(self.m)]
        out = np.stack([_eval_series(D, pts) for D in self._cache["dfloat"]], axis=-1)
        return out[0] if single else out

    def _mp_terms(self, which=None):
        key = ("mp", which, mpmath.mp.prec)
        if key not in self._cache:
            C = self.coeffs if which is None else self._mp_deriv_coeffs(which)
            terms = []
            for alpha in monomials_up_to(self.m, self.order):
                v = C[(slice(None),) + alpha]
                if any(c != 0 for c in v):
                    terms.append((alpha, [mpmath.mpf(c) for c in v]))
            self._cache[key] = terms
        return self._cache[key]

    def _mp_deriv_coeffs(self, j):
        key = ("dmp", j)
        if key not in self._cache:
            C = self.coeffs
            if C.dtype != object:
                C = C.astype(object)
            self._cache[key] = _derivative_coeffs(C, j)
        return self._cache[key]

    def _evaluate_mp(self, s, which=None):
        out = [mpmath.mpf(0)] * self.dim
        pw = [[mpmath.mpf(1)] for _ in s]
        for j, v in enumerate(s):
            for _ in range(self.order):
                pw[j].append(pw[j][-1] * v)
        for alpha, vec in self._mp_terms(which):
            mono = mpmath.mpf(1)
            for j, a in enumerate(alpha):
                if a:
                    mono *= pw[j][a]
            out = [o + c * mono for o, c in zip(out, vec)]
        return out

    def _derivative_mp(self, s):
        cols = [self._evaluate_mp(s, which=j) for j in range(self.m)]
        M = mpmath.matrix(self.dim, self.m)
        for j, col in enumerate(cols):
            for i in range(self.dim):
                M[i, j] = col[i]
        return M

    def conjugacy_residual(self, fmap: AnalyticMap, radius: float, n_samples: int = 1000,
                           seed: int = 0) -> float:
        """max ``|f(P(s)) - P(Lambda s)|`` over ``n_samples`` points with ``|s| <= radius``."""
        unit = _unit_samples(self.m, n_samples, seed)
        if self.precision is None:
            return _float_residual(self, fmap, unit * radius)
        with mpmath.workdps(self.precision):
            return float(_mp_residual(self, fmap, unit, mpmath.mpf(radius)))

    def to_dict(self, tol: float = 0.0) -> dict:
        return {
            "side": self.side,
            "order": self.order,
            "point": [float(v) for v in self.point],
            "multipliers": [float(v) for v in self.multipliers],
            "validity_radius": self.validity_radius,
            "residual": self.residual,
            "precision_digits": self.precision,
            "terms": [[list(a), [float(c) for c in v]] for a, v in self.terms(tol)],
        }


def _unit_samples(m: int, n: int, seed: int = 0) -> np.ndarray:
    if m == 1:
        return np.linspace(-1.0, 1.0, n).reshape(-1, 1)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    # half the points on the sphere, where the residual is largest
    r = np.ones(n)
    r[n // 2:] = rng.uniform(0, 1, n - n // 2) ** (1.0 / m)
    return g * r[:, None]


def _float_residual(chart: ManifoldChart, fmap: AnalyticMap, s: np.ndarray) -> float:
    lam = np.asarray([float(v) for v in chart.multipliers])
    with np.errstate(over="ignore", invalid="ignore"):
        lhs = eval_map(fmap, chart.evaluate(s))
        rhs = chart.evaluate(s * lam)
        err = np.linalg.norm(lhs - rhs, axis=1)
    if not np.all(np.isfinite(err)):
        return math.inf
    return float(err.max())


def _mp_residual(chart: ManifoldChart, fmap: AnalyticMap, unit: np.ndarray, radius):
    worst = mpmath.mpf(0)
    lam = [mpmath.mpf(v) for v in chart.multipliers]
    for row in unit:
        s = [mpmath.mpf(float(v)) * radius for v in row]
        lhs = eval_map(fmap, chart.evaluate(s))
        rhs = chart.evaluate([l * v for l, v in zip(lam, s)])
        err = mpmath.sqrt(mpmath.fsum((a - b) ** 2 for a, b in zip(lhs, rhs)))
        worst = max(worst, err)
    return worst


def _side_data(saddle: Saddle, side: str):
    if side == "stable":
        return list(saddle.stable_eigenvalues), saddle.stable_vectors
    if side == "unstable":
        return list(saddle.unstable_eigenvalues), saddle.unstable_vectors
    if side == "full":
        lam = list(saddle.stable_eigenvalues) + list(saddle.unstable_eigenvalues)
        if isinstance(saddle.stable_vectors, mpmath.matrix):
            n = saddle.dim
            V = mpmath.matrix(n, n)
            for j in range(saddle.n_minus):
                for i in range(n):
                    V[i, j] = saddle.stable_vectors[i, j]
            for j in range(saddle.n_plus):
                for i in range(n):
                    V[i, saddle.n_minus + j] = saddle.unstable_vectors[i, j]
            return lam, V
        return lam, saddle.eigen_matrix()
    raise InputError(f"unknown side {side!r}")


def _solve_homological(fmap: AnalyticMap, point, A, lam, V, all_eigs, K: int, mp_mode: bool):
    n = fmap.dim
    m = len(lam)
    shape = (K + 1,) * m
    dtype = object if mp_mode else float
    zero = mpmath.mpf(0) if mp_mode else 0.0
    P = []
    for i in range(n):
        arr = np.full(shape, zero, dtype=dtype)
        arr[(0,) * m] = point[i]
        for j in range(m):
            e = [0] * m
            e[j] = 1
            if K >= 1:
                arr[tuple(e)] = V[i, j]
        P.append(arr)
    polys = [p._numeric("mp" if mp_mode else "float") for p in fmap.components]
    deg = _degree_grid(m, K)
    eye = mpmath.eye(n) if mp_mode else np.eye(n)
    for k in range(2, K + 1):
        sub = (slice(0, k + 1),) * m
        mask = deg[sub] <= k
        F = _compose(polys, [Pi[sub] for Pi in P], k, mask)
        for alpha in np.argwhere(deg[sub] == k):
            alpha = tuple(int(a) for a in alpha)
            rhs = [-F[i][alpha] for i in range(n)]
            lam_a = 1
            for l, a in zip(lam, alpha):
                lam_a = lam_a * l**a
            gaps = [abs(lam_a - ev) for ev in all_eigs]
            jmin = int(np.argmin([float(g) for g in gaps]))
            if gaps[jmin] < SMALL_DIVISOR_TOL:
                if all(r == 0 for r in rhs):
                    # resonant monomial with vanishing forcing: coefficient stays zero
                    continue
                raise InternalResonanceError(
                    f"small divisor |lambda^{alpha} - lambda_{jmin}| = {float(gaps[jmin]):.3e}",
                    exponent=alpha, index=jmin)
            M = A - lam_a * eye
            if mp_mode:
                sol = mpmath.lu_solve(M, mpmath.matrix(rhs))
            else:
                sol = np.linalg.solve(M, np.asarray(rhs, dtype=float))
            for i in range(n):
                P[i][alpha] = sol[i]
    return np.stack(P) if not mp_mode else _stack_object(P)


def _stack_object(P):
    out = np.empty((len(P),) + P[0].shape, dtype=object)
    for i, arr in enumerate(P):
        out[i] = arr
    return out


def _mp_saddle(fmap: AnalyticMap, saddle: Saddle) -> Saddle:
    if is_mp(list(saddle.point)):
        return saddle
    p = find_fixed_point(fmap, to_mp([float(v) for v in saddle.point]))
    mp_saddle = classify_saddle(fmap, p)
    if (mp_saddle.n_minus, mp_saddle.n_plus) != (saddle.n_minus, saddle.n_plus):
        raise InputError("high precision spectrum split differs from double precision")
    return mp_saddle


def compute_parameterization(fmap: AnalyticMap, saddle: Saddle, side: str, order: int = 20, *,
                             precision: Optional[int] = None, residual_tol: float = RESIDUAL_TOL,
                             max_radius: float = 1.0, min_radius: float = 2.0**-40,
                             n_samples: Optional[int] = None, seed: int = 0) -> ManifoldChart:
    """Solve ``f(P(s)) = P(Lambda s)`` to total degree ``order``.

    The validity radius is the largest ``max_radius * 2**-j`` at which the
    conjugacy residual over the sample set is at most ``residual_tol``.
    With ``precision`` (decimal digits) the whole computation runs in mpmath.
    """
    if order > MAX_ORDER:
        raise InputError(f"order {order} exceeds the maximum {MAX_ORDER}")
    if order < 1:
        raise InputError("order must be >= 1")
    if saddle.complex_pairs:
        raise InputError("charts for complex multipliers are not supported")
    if saddle.defective:
        raise InputError("saddle has a (near) Jordan block; charts refused")
    if n_samples is None:
        n_samples = 1000 if precision is None else 64
    if precision is None:
        lam, V = _side_data(saddle, side)
        if not lam:
            raise InputError(f"saddle has no {side} multipliers")
        point = np.asarray(saddle.point, dtype=float)
        A = jacobian(fmap, point)
        all_eigs = list(saddle.stable_eigenvalues) + list(saddle.unstable_eigenvalues)
        coeffs = _solve_homological(fmap, point, A, lam, np.asarray(V, dtype=float), all_eigs,
                                    order, False)
        chart_point = point
        mults = tuple(float(v) for v in lam)
        vectors = np.asarray(V, dtype=float)
    else:
        with mpmath.workdps(precision):
            sad = _mp_saddle(fmap, saddle)
            lam, V = _side_data(sad, side)
            if not lam:
                raise InputError(f"saddle has no {side} multipliers")
            point = list(sad.point)
            A = jacobian(fmap, point)
            all_eigs = list(sad.stable_eigenvalues) + list(sad.unstable_eigenvalues)
            coeffs = _solve_homological(fmap, point, A, lam, V, all_eigs, order, True)
            chart_point = point
            mults = tuple(lam)
            vectors = np.array([[float(V[i, j]) for j in range(V.cols)] for i in range(V.rows)])
    draft = ManifoldChart(side, order, chart_point, mults, vectors, coeffs, 0.0, math.nan,
                          precision, fmap.name)
    radius, residual = _dyadic_radius(draft, fmap, residual_tol, max_radius, min_radius,
                                      n_samples, seed)
    log.debug("%s chart order %d: radius %.3g residual %.3e", side, order, radius, residual)
    return ManifoldChart(side, order, chart_point, mults, vectors, coeffs, radius, residual,
                         precision, fmap.name)


def _dyadic_radius(chart, fmap, tol, max_radius, min_radius, n_samples, seed):
    r = float(max_radius)
    while r >= min_radius:
        res = chart.conjugacy_residual(fmap, r, n_samples, seed)
        if res <= tol:
            return r, res
        r /= 2
    raise NotFoundError(f"no radius >= {min_radius:g} with conjugacy residual <= {tol:g}")


# --------------------------------------------------------------------------
# globalization


@dataclass(frozen=True, eq=False)
class ManifoldSamples:
    """Ordered samples of a globalized one-dimensional manifold (or a surface grid).

    For curves, ``params`` is sorted and consecutive points with equal
    ``piece`` are joined by segments; points outside the bounding box have
    been removed, which splits the curve into pieces.
    """

    side: str
    params: np.ndarray     # (npts,) for curves, (npts, m) for surfaces
    points: np.ndarray     # (npts, n)
    iterates: np.ndarray   # (npts,) number of map applications used
    piece: np.ndarray      # (npts,) connected-component label
    chart: ManifoldChart
    bbox: tuple
    notes: tuple = ()

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def is_curve(self) -> bool:
        return self.params.ndim == 1

    def polylines(self) -> list:
        """List of ``(params, points)`` arrays, one per connected piece."""
        if not self.is_curve or self.count == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.piece)) + 1
        return [(p, x) for p, x in zip(np.split(self.params, cuts), np.split(self.points, cuts))]

    def arc_length(self) -> float:
        return float(sum(np.linalg.norm(np.diff(x, axis=0), axis=1).sum()
                         for _, x in self.polylines()))

    def max_spacing(self) -> float:
        gaps = [np.linalg.norm(np.diff(x, axis=0), axis=1) for _, x in self.polylines() if len(x) > 1]
        return float(max((g.max() for g in gaps), default=0.0))

    def distance(self, points) -> np.ndarray:
        """Distance from each point to the sampled set (segments for curves)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return distance_to_polylines(pts, [x for _, x in self.polylines()]) if self.is_curve \
            else cKDTree(self.points).query(pts)[0]

    def exact_distance(self, points, fmap: AnalyticMap, iterations: int = 30) -> np.ndarray:
        """Distance to the curve itself: nearest sample, then Newton on ``(G(s) - q) . G'(s) = 0``."""
        if not self.is_curve or self.chart is None:
            return self.distance(points)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(pts.shape[0])
        for i, q in enumerate(pts):
            j = int(np.argmin(np.linalg.norm(self.points - q, axis=1)))
            s = float(self.params[j])
            best = float(np.linalg.norm(self.points[j] - q))
            for _ in range(iterations):
                x, D, _ = global_chart_point(self.chart, fmap, s)
                t = D[:, 0]
                r = x - q
                best = min(best, float(np.linalg.norm(r)))
                step = float(r @ t) / float(t @ t)
                s -= step
                if abs(step) <= 1e-16 * max(1.0, abs(s)):
                    break
            x, _, _ = global_chart_point(self.chart, fmap, s)
            out[i] = min(best, float(np.linalg.norm(x - q)))
        return out

    def branch_labels(self) -> list:
        sign = np.sign(self.params) if self.is_curve else np.zeros(self.count)
        return [f"{self.side}{'+' if s > 0 else '-' if s < 0 else '0'}" for s in sign]

    def to_csv(self, handle=None, header: bool = True) -> str:
        """Rows ``branch, k, s, x0, x1, ...``."""
        out = handle if handle is not None else io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        if header:
            writer.writerow(csv_header(self.points.shape[1]))
        for label, k, s, x in zip(self.branch_labels(), self.iterates, self.params, self.points):
            s_txt = repr(float(s)) if self.is_curve else ";".join(repr(float(v)) for v in s)
            writer.writerow([label, int(k), s_txt] + [repr(float(v)) for v in x])
        return out.getvalue() if handle is None else ""


def csv_header(n: int) -> list:
    return ["branch", "k", "s"] + [f"x{i}" for i in range(n)]


def distance_to_polylines(pts: np.ndarray, lines: list) -> np.ndarray:
    """Euclidean distance from each point to a union of polylines."""
    best = np.full(pts.shape[0], np.inf)
    if not lines:
        return best
    A = np.concatenate([x[:-1] for x in lines if len(x) > 1] or [np.zeros((0, pts.shape[1]))])
    B = np.concatenate([x[1:] for x in lines if len(x) > 1] or [np.zeros((0, pts.shape[1]))])
    singles = [x for x in lines if len(x) == 1]
    if singles:
        S = np.concatenate(singles)
        A, B = np.concatenate([A, S]), np.concatenate([B, S])
    if A.shape[0] == 0:
        return best
    mid = 0.5 * (A + B)
    half = 0.5 * np.linalg.norm(B - A, axis=1)
    tree = cKDTree(mid)
    reach = half.max()
    for i, q in enumerate(pts):
        d0 = tree.query(q)[0]
        cand = tree.query_ball_point(q, d0 + 2 * reach + 1e-15)
        a, b = A[cand], B[cand]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        t = np.where(denom > 0, np.einsum("ij,ij->i", q - a, ab) / np.where(denom > 0, denom, 1), 0)
        t = np.clip(t, 0, 1)
        best[i] = np.min(np.linalg.norm(a + t[:, None] * ab - q, axis=1))
    return best


def _curve_step(fmap: AnalyticMap, side: str):
    if side == "unstable":
        return lambda x: eval_map(fmap, x)
    if not fmap.has_inverse:
        return lambda x: _newton_preimages(fmap, x)
    return lambda x: eval_inverse(fmap, x)


def _newton_preimages(fmap: AnalyticMap, x, max_iter: int = 60, tol: float = 1e-14):
    """Row-wise Newton solve of ``f(z) = x`` started at ``z = x``; NaN where it fails."""
    x = np.asarray(x, dtype=float)
    z = x.copy()
    done = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        r = np.asarray(eval_map(fmap, z), dtype=float) - x
        done = np.linalg.norm(r, axis=-1) <= tol * (1 + np.linalg.norm(x, axis=-1))
        if done.all():
            break
        J = np.array([jacobian(fmap, zi) for zi in z])
        ok = np.abs(np.linalg.det(J)) > 1e-300
        step = np.zeros_like(z)
        step[ok] = np.linalg.solve(J[ok], r[ok][..., None])[..., 0]
        z = np.where((~done & ok)[:, None], z - step, z)
        z[~np.isfinite(z).all(axis=1)] = np.nan
    z[~done] = np.nan
    return z


def global_curve_points(chart: ManifoldChart, fmap: AnalyticMap, sigma: np.ndarray):
    """``G(sigma) = F^k(P(sigma / mu^k))`` with ``k`` the least such that the argument is in the chart.

    Returns ``(points, k)``. ``F = f`` and ``mu = lambda`` on the unstable
    side, ``F = f^-1`` and ``mu = 1/lambda`` on the stable side.
    """
    if chart.m != 1:
        raise InputError("global curves need a one-dimensional chart")
    step = _curve_step(fmap, chart.side)
    mu = float(chart.multipliers[0]) if chart.side == "unstable" else 1.0 / float(chart.multipliers[0])
    rho = chart.validity_radius
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore"):
        k = np.ceil(np.log(np.abs(sigma) / rho) / np.log(abs(mu)) - 1e-12)
    k = np.where(np.abs(sigma) <= rho, 0, np.maximum(k, 0)).astype(int)
    pts = chart.evaluate((sigma / mu**k).reshape(-1, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, int(k.max(initial=0)) + 1):
            sel = k >= j
            if np.any(sel):
                pts[sel] = step(pts[sel])
    return pts, k


def global_chart_point(chart: ManifoldChart, fmap: AnalyticMap, sigma):
    """Point, derivative ``(n, m)`` and transport count of the global chart at ``sigma``.

    ``G(sigma) = F^k(P(sigma / mu^k))`` with ``k`` the least integer putting
    the argument in the chart ball; derivatives follow by the chain rule.
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    lam = np.asarray([float(v) for v in chart.multipliers])
    mu = lam if chart.side == "unstable" else 1.0 / lam
    rho = chart.validity_radius
    k = 0
    s = sigma.copy()
    while np.linalg.norm(s) > rho:
        s = s / mu
        k += 1
        if k > 10_000:
            raise InputError("parameter too far from the chart")
    x = chart.evaluate(s.reshape(1, -1))[0]
    D = chart.derivative(s.reshape(1, -1))[0] / mu**k
    for _ in range(k):
        if chart.side == "unstable":
            J = jacobian(fmap, x)
            x = eval_map(fmap, x)
        else:
            x = eval_inverse(fmap, x)
            J = np.linalg.inv(jacobian(fmap, x))
        D = J @ D
    return x, D, k


def global_curve_tangent(chart: ManifoldChart, fmap: AnalyticMap, sigma: float):
    """Point and derivative ``dG/dsigma`` at one parameter value of a global curve."""
    x, D, k = global_chart_point(chart, fmap, [sigma])
    return x, D[:, 0], k


def _in_box(pts, bbox):
    lo, hi = bbox
    ok = np.all(np.isfinite(pts), axis=1)
    with np.errstate(invalid="ignore"):
        ok &= np.all(pts >= lo, axis=1) & np.all(pts <= hi, axis=1)
    return ok


def _refine(chart, fmap, sig, pts, k, bbox, max_spacing, max_points, max_passes=60):
    """Insert midpoints until neighbours (not both outside the box) are within ``max_spacing``."""
    truncated = False
    for _ in range(max_passes):
        inside = _in_box(pts, bbox)
        with np.errstate(invalid="ignore", over="ignore"):
            d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        d = np.where(np.isfinite(d), d, np.inf)
        a, b = sig[:-1], sig[1:]
        need = (d > max_spacing) & (inside[:-1] | inside[1:]) & ~((a < 0) & (b > 0)) \
            & ((b - a) > 1e-15 * np.maximum(1.0, np.abs(a)))
        if not np.any(need):
            break
        if sig.size + need.sum() > max_points:
            truncated = True
            break
        mid = 0.5 * (a[need] + b[need])
        mpts, mk = global_curve_points(chart, fmap, mid)
        order = np.argsort(np.concatenate([sig, mid]), kind="stable")
        sig = np.concatenate([sig, mid])[order]
        pts = np.concatenate([pts, mpts])[order]
        k = np.concatenate([k, mk])[order]
    return sig, pts, k, truncated


def _prune_outside(sig, pts, k, bbox):
    inside = _in_box(pts, bbox)
    keep = inside.copy()
    keep[:-1] |= inside[1:]
    keep[1:] |= inside[:-1]
    return sig[keep], pts[keep], k[keep]


def globalize_manifold(chart: ManifoldChart, fmap: AnalyticMap, iterations: int, *,
                       bbox=None, max_spacing: float = MAX_SPACING,
                       max_points: int = 2_000_000) -> ManifoldSamples:
    """Sample the manifold swept by ``iterations`` applications of ``F`` to the local chart.

    Level 0 is the chart itself on ``|sigma| <= rho``; level ``k`` samples
    are the images of level ``k-1`` samples (parameters times ``mu``),
    refined so that neighbour spacing is at most ``max_spacing``. Points
    leaving ``bbox`` are dropped and recorded in ``notes``.
    """
    if iterations < 0:
        raise InputError("iterations must be >= 0")
    n = chart.dim
    if bbox is None:
        bbox = (np.full(n, -10.0), np.full(n, 10.0))
    bbox = (np.asarray(bbox[0], dtype=float), np.asarray(bbox[1], dtype=float))
    if chart.m != 1:
        return _globalize_surface(chart, fmap, iterations, bbox)
    if iterations > 0:
        _curve_step(fmap, chart.side)
    rho = chart.validity_radius
    mu = float(chart.multipliers[0]) if chart.side == "unstable" else 1.0 / float(chart.multipliers[0])
    notes = []
    n0 = int(math.ceil(2 * rho / max_spacing)) + 1
    sig = np.linspace(-rho, rho, max(n0, 3))
    pts, k = global_curve_points(chart, fmap, sig)
    sig, pts, k, trunc = _refine(chart, fmap, sig, pts, k, bbox, max_spacing, max_points)
    levels = [(sig, pts, k)]
    prev = sig[np.abs(sig) > rho / abs(mu) * (1 + 1e-12)]
    total = sig.size
    for level in range(1, iterations + 1):
        if trunc:
            break
        cand = np.sort(mu * prev)
        if cand.size == 0:
            break
        lpts, lk = global_curve_points(chart, fmap, cand)
        cand, lpts, lk, trunc = _refine(chart, fmap, cand, lpts, lk, bbox, max_spacing,
                                        max_points - total)
        cand, lpts, lk = _prune_outside(cand, lpts, lk, bbox)
        levels.append((cand, lpts, lk))
        total += cand.size
        prev = cand
    if trunc:
        notes.append(f"point budget {max_points} reached; sampling truncated")
    sig = np.concatenate([lv[0] for lv in levels])
    pts = np.concatenate([lv[1] for lv in levels])
    k = np.concatenate([lv[2] for lv in levels])
    order = np.argsort(sig, kind="stable")
    sig, pts, k = sig[order], pts[order], k[order]
    sig, idx = np.unique(sig, return_index=True)
    pts, k = pts[idx], k[idx]
    if not trunc:
        sig, pts, k, trunc = _refine(chart, fmap, sig, pts, k, bbox, max_spacing, max_points)
        if trunc:
            notes.append(f"point budget {max_points} reached; sampling truncated")
    inside = _in_box(pts, bbox)
    if not np.all(inside):
        notes.append(f"{int((~inside).sum())} samples left the bounding box and were dropped")
    # a segment survives only if both ends are inside
    piece = np.cumsum(~inside)
    sig, pts, k, piece = sig[inside], pts[inside], k[inside], piece[inside]
    return ManifoldSamples(chart.side, sig, pts, k, piece, chart,
                           (tuple(bbox[0]), tuple(bbox[1])), tuple(notes))


def _globalize_surface(chart, fmap, iterations, bbox, grid: int = 101):
    """Grid sampling for charts of dimension >= 2 (no adaptive refinement)."""
    m = chart.m
    lam = np.asarray([float(v) for v in chart.multipliers])
    mu = lam if chart.side == "unstable" else 1.0 / lam
    step = _curve_step(fmap, chart.side) if iterations > 0 else None
    rho = chart.validity_radius
    axes = [np.linspace(-rho * abs(u) ** iterations, rho * abs(u) ** iterations, grid) for u in mu]
    sig = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    k = np.zeros(sig.shape[0], dtype=int)
    s = sig.copy()
    for _ in range(iterations):
        big = np.linalg.norm(s, axis=1) > rho
        s[big] /= mu
        k[big] += 1
    ok = np.linalg.norm(s, axis=1) <= rho * (1 + 1e-12)
    sig, s, k = sig[ok], s[ok], k[ok]
    pts = chart.evaluate(s)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, iterations + 1):
            sel = k >= j
            if np.any(sel):
                pts[sel] = step(pts[sel])
    inside = _in_box(pts, bbox)
    notes = () if np.all(inside) else (f"{int((~inside).sum())} samples left the bounding box",)
    return ManifoldSamples(chart.side, sig[inside], pts[inside], k[inside],
                           np.zeros(int(inside.sum()), dtype=int), chart,
                           (tuple(bbox[0]), tuple(bbox[1])), notes)


# --------------------------------------------------------------------------
# graph portions and admissibility


@dataclass(frozen=True, eq=False)
class GraphPortion:
    """``y -> (Lambda(y), y)`` near ``y = 0`` with ``Lambda(0) = x_-``.

    ``coeffs`` maps multi-indices ``w`` (length ``n_plus``) to vectors of
    length ``n_minus``, in the coordinates the samples were expressed in.
    """

    coeffs: dict
    degree: int
    domain_radius: float
    anchor: tuple
    fit_residual: float
    n_minus: int
    n_plus: int
    coordinates: str = "eigen"
    base_chart: Optional[ManifoldChart] = None

    def evaluate(self, y):
        """``Lambda(y)``: float ``(npts, n_plus)`` arrays or an mpf list (one point)."""
        if isinstance(y, (list, tuple)) and y and isinstance(y[0], mpmath.mpf):
            out = [mpmath.mpf(0)] * self.n_minus
            for w, vec in self.coeffs.items():
                mono = mpmath.mpf(1)
                for v, e in zip(y, w):
                    if e:
                        mono *= v**e
                out = [o + mpmath.mpf(c) * mono for o, c in zip(out, vec)]
            return out
        y = np.asarray(y, dtype=float)
        single = y.ndim == 0 or (y.ndim == 1 and self.n_plus > 1)
        Y = y.reshape(-1, self.n_plus)
        out = np.zeros((Y.shape[0], self.n_minus))
        for w, vec in self.coeffs.items():
            mono = np.prod(Y ** np.asarray(w), axis=1)
            out += np.outer(mono, np.asarray(vec, dtype=float))
        return out[0] if single else out

    @property
    def x_minus(self) -> tuple:
        return tuple(self.anchor)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "domain_radius": self.domain_radius,
            "anchor": [float(v) for v in self.anchor],
            "fit_residual": self.fit_residual,
            "coordinates": self.coordinates,
            "coefficients": [[list(w), [float(c) for c in v]] for w, v in sorted(self.coeffs.items())],
        }


def extract_graph_portion(unstable_samples, saddle: Saddle, h, radius: float, *,
                          degree: int = 10, fit_tol: float = 1e-7,
                          converter: Optional[Callable] = None,
                          coordinates: str = "eigen",
                          base_chart: Optional[ManifoldChart] = None) -> GraphPortion:
    """Fit ``x = Lambda(y)`` over ``|y| <= radius`` to the sheet of ``W+`` through ``h``.

    ``unstable_samples`` is a :class:`ManifoldSamples` or an ordered
    ``(npts, n)`` array of points along the manifold. Points are mapped to
    ``(x, y)`` coordinates by ``converter`` (default: eigen-coordinates of
    the saddle); ``h`` is given in ambient coordinates and must lie on the
    local stable manifold, so its coordinates are ``(x_-, 0)``.

    For one unstable dimension the connected run of samples through ``h``
    must be monotone in ``y`` (one sheet); a fold raises
    :class:`NotAGraphError`.
    """
    conv = converter if converter is not None else saddle.to_eigen_coordinates
    n_minus, n_plus = saddle.n_minus, saddle.n_plus
    if isinstance(unstable_samples, ManifoldSamples):
        runs = [x for _, x in unstable_samples.polylines()] if unstable_samples.is_curve \
            else [unstable_samples.points]
        base_chart = base_chart or unstable_samples.chart
    else:
        runs = [np.asarray(unstable_samples, dtype=float)]
    hc = np.asarray(conv(np.atleast_2d(np.asarray(h, dtype=float))), dtype=float)[0]
    x_minus, y_h = hc[:n_minus], hc[n_minus:]
    if np.linalg.norm(y_h) > 1e-6 * max(1.0, radius):
        log.warning("anchor is off the local stable manifold by %.3e", np.linalg.norm(y_h))
    coords = [np.asarray(conv(x), dtype=float) for x in runs]
    if n_plus == 1:
        sel = _sheet_through_anchor(coords, hc, n_minus, radius)
    else:
        allc = np.concatenate(coords)
        near = np.linalg.norm(allc[:, n_minus:], axis=1) <= radius
        near &= np.linalg.norm(allc[:, :n_minus] - x_minus, axis=1) <= 10 * radius + 1e-3
        sel = allc[near]
    X, Y = sel[:, :n_minus], sel[:, n_minus:]
    exps = [w for w in monomials_up_to(n_plus, degree) if sum(w) > 0]
    if len(sel) < 2 * len(exps) + 2:
        raise NotAGraphError(f"only {len(sel)} samples over |y| <= {radius:g}; need a denser sampling")
    # constant term pinned to x_-; columns scaled by the radius for conditioning
    V = np.column_stack([np.prod((Y / radius) ** np.asarray(w), axis=1) for w in exps])
    sol, *_ = np.linalg.lstsq(V, X - x_minus, rcond=None)
    fit = V @ sol + x_minus
    resid = float(np.max(np.abs(fit - X))) if len(X) else math.inf
    if resid > fit_tol:
        raise NotAGraphError(f"graph fit residual {resid:.3e} exceeds {fit_tol:g}; "
                             "try a smaller radius or a higher degree")
    coeffs = {(0,) * n_plus: tuple(float(v) for v in x_minus)}
    for w, row in zip(exps, sol):
        coeffs[tuple(w)] = tuple(float(v) / radius ** sum(w) for v in row)
    return GraphPortion(coeffs, degree, float(radius), tuple(float(v) for v in x_minus), resid,
                        n_minus, n_plus, coordinates, base_chart)


def _sheet_through_anchor(coords, hc, n_minus, radius):
    best = None
    for ci, c in enumerate(coords):
        if len(c) == 0:
            continue
        d = np.linalg.norm(c - hc, axis=1)
        j = int(np.argmin(d))
        if best is None or d[j] < best[0]:
            best = (d[j], ci, j)
    if best is None:
        raise NotAGraphError("no unstable samples")
    _, ci, j = best
    c = coords[ci]
    y = c[:, n_minus]
    inside = np.abs(y) <= radius
    lo = j
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = j
    while hi < len(c) - 1 and inside[hi + 1]:
        hi += 1
    run = c[lo:hi + 1]
    dy = np.diff(run[:, n_minus])
    if len(dy) and not (np.all(dy > 0) or np.all(dy < 0)):
        raise NotAGraphError(f"unstable manifold folds within |y| <= {radius:g}; use a smaller radius")
    if lo == 0 or hi == len(c) - 1:
        # the run must leave the domain on both ends, otherwise it folds back or ends inside
        ys = run[:, n_minus]
        if ys.min() > -radius * 0.999 or ys.max() < radius * 0.999:
            raise NotAGraphError(f"sampled sheet does not cover |y| <= {radius:g}")
    return run


@dataclass(frozen=True)
class AdmissibilityVerdict:
    admissible: bool
    zero_indices: tuple = ()
    tolerance: float = ADMISSIBILITY_TOL

    def to_dict(self) -> dict:
        return {"admissible": self.admissible, "zero_indices": list(self.zero_indices),
                "tolerance": self.tolerance}


def admissibility_test(h_sigma, tol: float = ADMISSIBILITY_TOL) -> AdmissibilityVerdict:
    """All chart coordinates of ``h^sigma`` must exceed ``tol`` in modulus (indices 1-based)."""
    coords = [abs(v) for v in h_sigma]
    bad = tuple(i + 1 for i, v in enumerate(coords) if not v > tol)
    return AdmissibilityVerdict(not bad, bad, tol)


__all__ = [
    "AdmissibilityVerdict",
    "GraphPortion",
    "ManifoldChart",
    "ManifoldSamples",
    "admissibility_test",
    "compute_parameterization",
    "csv_header",
    "distance_to_polylines",
    "extract_graph_portion",
    "global_chart_point",
    "global_curve_points",
    "global_curve_tangent",
    "globalize_manifold",
]
