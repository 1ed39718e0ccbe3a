"""Peeling a putative first integral along shadow orbits.

Near the saddle, in linearizing coordinates, a first integral ``I`` takes
the constant value ``e = I(h)`` on every point ``N_i = (X_i, Y)`` of the
hyperplane ``{y = Y}`` that is the ``i``-th image of a point ``M_i`` of the
graph portion ``x = Lambda(y)``. Writing

    I(N_i) = sum_nu X_i^nu S_nu(Y),    S_nu(Y) = sum_w a_{nu,w} Y^w,

the terms decay like ``|lambda_-^nu|^i`` and are separated one scale at a
time (stage 1). Repeating for ``Y(n) = delta^n C`` separates the ``w``
coefficients of each ``S_nu`` the same way (stage 2). If every value equals
``e`` the triangular structure forces all non-constant coefficients to zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np

from .errors import DomainError, InputError, PeelingError
from .mapcore import AnalyticMap, Saddle
from .polynomial import Polynomial, monomials_up_to
from .spectrum import OrderedExponentScale, scale_covering_degree

log = logging.getLogger(__name__)

ZERO_TOL_DOUBLE = 1e-6
ZERO_TOL_MP = 1e-20
SPOT_TOL = 1e-9
RECOVERY_TOL = 1e-8
COEFF_FLOOR = 1e-12
NORMAL_FORM_TOL = 1e-12
CONVERGENCE_TOL = 1e-10
CONVERGENCE_RUN = 5
DEFAULT_LENGTH = 41


def default_zero_tol(precision: Optional[int]) -> float:
    return ZERO_TOL_MP if precision and precision >= 50 else ZERO_TOL_DOUBLE


def _mono(point, e):
    v = mpmath.mpf(1)
    for x, k in zip(point, e):
        if k:
            v *= x**k
    return v


def _powvec(lams, k):
    return [l**k for l in lams]


# ---------------------------------------------------------------------------
# shadow sequences


@dataclass(frozen=True)
class SpotCheck:
    index: int
    error: float
    passed: bool

    def to_dict(self) -> dict:
        return {"i": self.index, "error": self.error, "passed": self.passed}


@dataclass(frozen=True)
class ShadowSequence:
    """Points ``M_i = (x_i, y_i)`` and ``N_i = (X_i, Y)`` for ``i`` in ``indices``."""

    Y: tuple
    lam_minus: tuple
    lam_plus: tuple
    indices: tuple
    x: tuple
    y: tuple
    X: tuple
    provenance: str  # "linear" or "normal_form"
    minimal_index: int
    precision: int
    x_minus: tuple
    spot_checks: tuple = ()
    backward: tuple = ()  # normal form: b^-j(Y), j = 0.. max index

    @property
    def i_range(self) -> tuple:
        return self.indices[0], self.indices[-1]

    @property
    def n_minus(self) -> int:
        return len(self.lam_minus)

    @property
    def n_plus(self) -> int:
        return len(self.lam_plus)

    def N(self, k: int) -> list:
        """Point ``N_i`` for the ``k``-th stored index."""
        return list(self.X[k]) + list(self.Y)

    def M(self, k: int) -> list:
        return list(self.x[k]) + list(self.y[k])

    def values(self, Q) -> list:
        """``Q(N_i)`` at the working precision; ``Q`` a Polynomial or a callable on mpf lists."""
        with mpmath.workdps(self.precision):
            if isinstance(Q, Polynomial):
                return [Q.evaluate(self.N(k)) for k in range(len(self.indices))]
            return [mpmath.mpf(Q(self.N(k))) for k in range(len(self.indices))]

    def to_dict(self) -> dict:
        return {
            "C_plus": [float(v) for v in self.Y],
            "i_range": list(self.i_range),
            "minimal_index": self.minimal_index,
            "provenance": self.provenance,
            "precision": self.precision,
            "spot_checks": [s.to_dict() for s in self.spot_checks],
        }


def _graph_eval(graph, y):
    if hasattr(graph, "evaluate"):
        return list(graph.evaluate(list(y)))
    return [mpmath.mpf(v) for v in graph(list(y))]


def _feasible_start(Y, lam_plus, radius, lin_chart, graph, limit=10000):
    inv = [1 / mpmath.mpf(l) for l in lam_plus]
    r = mpmath.mpf(radius) * (1 + mpmath.mpf(10) ** -12)
    for i in range(limit):
        y = [v * l**i for v, l in zip(Y, inv)]
        if max(abs(v) for v in y) <= r:
            if lin_chart is None:
                return i
            x = _graph_eval(graph, y)
            if lin_chart.transport_range(x + y) is not None:
                return i
    raise DomainError(f"Y = {[float(v) for v in Y]} never reaches the graph domain")


def _resolve_range(i_range, N, length):
    if i_range is None:
        return list(range(N, N + length))
    lo, hi = int(i_range[0]), int(i_range[1])
    if hi < lo:
        raise InputError("empty i_range")
    if lo < N:
        raise DomainError(f"i_range starts at {lo} below the minimal feasible index {N}", minimal_index=N)
    return list(range(lo, hi + 1))


def _spot_indices(indices, count):
    if count <= 0:
        return []
    if count >= len(indices):
        return list(indices)
    picks = np.linspace(0, len(indices) - 1, count).round().astype(int)
    return [indices[k] for k in sorted(set(int(p) for p in picks))]


def build_shadow_sequence(graph, lam_minus, lam_plus, Y_plus, i_range=None, *,
                          length: int = DEFAULT_LENGTH, precision: int = 50,
                          lin_chart=None, spot_checks: int = 3,
                          spot_tol: float = SPOT_TOL) -> ShadowSequence:
    """Shadow sequence in the exact linear model ``f = Lambda`` of the linearizing coordinates.

    ``graph`` provides ``Lambda`` (``.evaluate`` on mpf lists, ``.domain_radius``);
    ``y_i = lam_plus^-i Y`` and ``X_i = lam_minus^i Lambda(y_i)``. With a
    :class:`LinearizingChart` the identity ``f^i(M_i) = N_i`` is re-checked in
    ambient coordinates by direct iteration for ``spot_checks`` indices.
    """
    radius = getattr(graph, "domain_radius", math.inf)
    with mpmath.workdps(precision):
        lm = tuple(mpmath.mpf(v) for v in lam_minus)
        lp = tuple(mpmath.mpf(v) for v in lam_plus)
        Y = tuple(mpmath.mpf(v) for v in Y_plus)
        if len(Y) != len(lp):
            raise InputError("Y_plus has the wrong dimension")
        N = _feasible_start(Y, lp, radius, lin_chart, graph)
        idx = _resolve_range(i_range, N, length)
        xs, ys, Xs = [], [], []
        for i in idx:
            y = [v / l**i for v, l in zip(Y, lp)]
            x = _graph_eval(graph, y)
            xs.append(tuple(x))
            ys.append(tuple(y))
            Xs.append(tuple(l**i * v for l, v in zip(lm, x)))
        x_minus = tuple(_graph_eval(graph, [mpmath.mpf(0)] * len(Y)))
        checks = []
        if lin_chart is not None:
            for i in _spot_indices(idx, spot_checks):
                k = idx.index(i)
                checks.append(_spot_check(lin_chart, list(xs[k]) + list(ys[k]),
                                          list(Xs[k]) + list(Y), i, spot_tol))
    seq = ShadowSequence(Y, lm, lp, tuple(idx), tuple(xs), tuple(ys), tuple(Xs), "linear",
                         N, precision, x_minus, tuple(checks))
    return seq


def _spot_check(lin_chart, M, Nv, i, tol):
    from .mapcore import iterate

    with mpmath.workdps(lin_chart.precision):
        m_amb, _ = lin_chart.to_ambient(M, policy="first")
        n_amb, _ = lin_chart.to_ambient(Nv, policy="last")
        img = iterate(lin_chart.fmap, m_amb, i)
        err = float(max(abs(a - b) for a, b in zip(img, n_amb)))
    return SpotCheck(int(i), err, err <= tol)


# ---------------------------------------------------------------------------
# normal form


@dataclass(frozen=True)
class NormalFormReport:
    is_normal_form: bool
    violations: tuple  # ((component, exponent, coefficient), ...)
    map: AnalyticMap   # the map in eigen-coordinates centred at the saddle
    multipliers: tuple
    n_minus: int

    def remainder(self, side: str) -> list:
        """Components of ``r = f - f_lin`` on one side, as polynomials."""
        comps = self.map.components
        n = self.map.dim
        out = []
        rng = range(self.n_minus) if side == "stable" else range(self.n_minus, n)
        for c in rng:
            lin = Polynomial.variable(n, c, self.multipliers[c])
            out.append(comps[c] - lin)
        return out

    def to_dict(self) -> dict:
        return {
            "is_normal_form": self.is_normal_form,
            "violations": [[c, list(e), float(v)] for c, e, v in self.violations],
        }


def _to_eigen_map(m: AnalyticMap, s: Saddle) -> AnalyticMap:
    n = m.dim
    E = np.asarray(s.eigen_matrix(), dtype=float)
    p = [float(v) for v in s.point]
    exact = np.allclose(E, np.eye(n), atol=0, rtol=0) and all(v == 0 for v in p)
    if exact:
        return m
    Einv = np.linalg.inv(E)
    subs = []
    for j in range(n):
        terms = {(0,) * n: p[j]} if p[j] else {}
        for k in range(n):
            if E[j, k]:
                e = [0] * n
                e[k] = 1
                terms[tuple(e)] = float(E[j, k])
        subs.append(Polynomial(n, terms))
    pushed = [c.map_coefficients(float).compose(subs) - p[j] for j, c in enumerate(m.components)]
    comps = []
    for i in range(n):
        acc = Polynomial(n, {})
        for j in range(n):
            if Einv[i, j]:
                acc = acc + pushed[j] * float(Einv[i, j])
        comps.append(Polynomial(n, {e: c for e, c in acc.items() if abs(c) > 1e-15}))
    return AnalyticMap(n, tuple(comps), None, f"{m.name}-eigen", dict(m.params))


def check_normal_form(m: AnalyticMap, s: Saddle, tol: float = NORMAL_FORM_TOL) -> NormalFormReport:
    """Is ``r = f - f_lin`` split as ``r_-(x)``, ``r_+(y)`` in eigen-coordinates?

    Off-diagonal linear terms are reported as violations too.
    """
    g = _to_eigen_map(m, s)
    n = g.dim
    nm = s.n_minus
    mults = tuple(float(v) for v in s.stable_eigenvalues) + tuple(float(v) for v in s.unstable_eigenvalues)
    bad = []
    for c, comp in enumerate(g.components):
        other = range(nm, n) if c < nm else range(nm)
        for e, coef in sorted(comp.items()):
            cf = float(coef)
            if sum(e) == 1 and e[c] == 1:
                continue
            if abs(cf) <= tol:
                continue
            if sum(e) <= 1 or any(e[k] for k in other):
                bad.append((c, tuple(e), cf))
    return NormalFormReport(not bad, tuple(bad), g, mults, nm)


def _split_maps(nf: NormalFormReport):
    """Stable map ``x -> a(x)`` and unstable map ``y -> b(y)`` of a split normal form."""
    if not nf.is_normal_form:
        raise InputError("map is not in normal form")
    n, nm = nf.map.dim, nf.n_minus
    comps = nf.map.components

    def restrict(poly, keep):
        return Polynomial(len(keep), {tuple(e[k] for k in keep): c for e, c in poly.items()})

    xs = list(range(nm))
    ys = list(range(nm, n))
    a = [restrict(comps[c], xs) for c in xs]
    b = [restrict(comps[c], ys) for c in ys]
    return a, b


def _apply(polys, v):
    return [p.evaluate(list(v)) for p in polys]


def _invert_unstable(b, target, lam_plus, tol, max_iter=80):
    y = [t / l for t, l in zip(target, lam_plus)]
    jac = [[p.derivative(k) for k in range(len(b))] for p in b]
    for _ in range(max_iter):
        r = [u - t for u, t in zip(_apply(b, y), target)]
        if max(abs(v) for v in r) <= tol:
            return y
        J = mpmath.matrix([[d.evaluate(list(y)) for d in row] for row in jac])
        step = mpmath.lu_solve(J, mpmath.matrix(r))
        y = [u - s for u, s in zip(y, step)]
    raise DomainError("unstable normal-form map could not be inverted along the sequence")


def build_normal_form_sequence(nf: NormalFormReport, graph, Y_plus, i_range=None, *,
                               length: int = DEFAULT_LENGTH, precision: int = 50) -> ShadowSequence:
    """Shadow sequence for a split normal form ``f(x, y) = (a(x), b(y))``.

    ``y_i = b^-i(Y)`` and ``X_i = a^i(x_i)``, ``x_i = Lambda(y_i)``; both
    orbits are computed without forward iteration in the expanding direction.
    """
    a, b = _split_maps(nf)
    nm = nf.n_minus
    radius = getattr(graph, "domain_radius", math.inf)
    with mpmath.workdps(precision):
        lm = tuple(mpmath.mpf(v) for v in nf.multipliers[:nm])
        lp = tuple(mpmath.mpf(v) for v in nf.multipliers[nm:])
        Y = tuple(mpmath.mpf(v) for v in Y_plus)
        tol = mpmath.mpf(10) ** (-(precision - 5))
        back = [list(Y)]
        r = mpmath.mpf(radius) * (1 + mpmath.mpf(10) ** -12)
        N = 0
        while max(abs(v) for v in back[-1]) > r:
            back.append(_invert_unstable(b, back[-1], lp, tol))
            N += 1
            if N > 10000:
                raise DomainError("Y never reaches the graph domain")
        idx = _resolve_range(i_range, N, length)
        while len(back) <= idx[-1]:
            back.append(_invert_unstable(b, back[-1], lp, tol))
        xs, ys, Xs = [], [], []
        for i in idx:
            y = back[i]
            x = _graph_eval(graph, y)
            X = list(x)
            for _ in range(i):
                X = _apply(a, X)
            xs.append(tuple(x))
            ys.append(tuple(y))
            Xs.append(tuple(X))
        x_minus = tuple(_graph_eval(graph, [mpmath.mpf(0)] * len(Y)))
    return ShadowSequence(Y, lm, lp, tuple(idx), tuple(xs), tuple(ys), tuple(Xs), "normal_form",
                          N, precision, x_minus, (), tuple(tuple(v) for v in back))


@dataclass(frozen=True)
class RemainderLimit:
    limit: tuple
    converged: bool
    history: tuple  # (i, value) pairs, first stable component
    x_limit: tuple  # x_- + l_plus
    admissible: bool
    zero_indices: tuple
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "l_plus": [float(v) for v in self.limit],
            "converged": self.converged,
            "x_minus_plus_l_plus": [float(v) for v in self.x_limit],
            "admissible": self.admissible,
            "zero_indices": list(self.zero_indices),
            "tolerance": self.tolerance,
            "history_tail": [[i, float(v)] for i, v in self.history[-CONVERGENCE_RUN:]],
        }


def remainder_limit(nf: NormalFormReport, seq: ShadowSequence, *,
                    conv_tol: float = CONVERGENCE_TOL, run: int = CONVERGENCE_RUN,
                    admissibility_tol: float = 1e-8) -> RemainderLimit:
    """``l_+ = lim lambda_-^-i r_{-,i}(x_i, y_i)`` by the sum formula.

    ``r_{-,i}(z) = sum_{j=1..i} lambda_-^(j-1) r_-(f^(i-j)(z))``. Converged
    when ``run`` successive differences are below ``conv_tol``.
    """
    if seq.provenance != "normal_form":
        raise InputError("remainder_limit needs a normal-form sequence")
    a, _ = _split_maps(nf)
    nm = nf.n_minus
    back = seq.backward
    rem = nf.remainder("stable")
    with mpmath.workdps(seq.precision):
        lm = seq.lam_minus
        hist = []
        vals = []
        for k, i in enumerate(seq.indices):
            # orbit of M_i: x part by forward iteration, y part from the backward list
            xo = [list(seq.x[k])]
            for _ in range(i - 1):
                xo.append(_apply(a, xo[-1]))
            total = [mpmath.mpf(0)] * nm
            for j in range(1, i + 1):
                step = i - j
                z = list(xo[step]) + list(back[i - step])
                rv = [r.evaluate(z) for r in rem]
                total = [t + l ** (j - 1) * v for t, l, v in zip(total, lm, rv)]
            val = [t / l**i for t, l in zip(total, lm)]
            vals.append(val)
            hist.append((i, val[0]))
        diffs = [max(abs(p - q) for p, q in zip(u, v)) for u, v in zip(vals, vals[1:])]
        converged = len(diffs) >= run and all(d < conv_tol for d in diffs[-run:])
        limit = tuple(vals[-1])
        x_lim = tuple(xm + l for xm, l in zip(seq.x_minus, limit))
    bad = tuple(c + 1 for c, v in enumerate(x_lim) if not abs(v) > admissibility_tol)
    return RemainderLimit(limit, converged, tuple(hist), x_lim, not bad, bad, admissibility_tol)


# ---------------------------------------------------------------------------
# peeling


@dataclass(frozen=True)
class PeelLevel:
    index: int
    exponent: tuple
    estimate: object      # mpf
    error_bar: float
    discrepancy: float
    noise: float
    window: tuple

    def to_dict(self) -> dict:
        return {"level": self.index, "exponent": list(self.exponent), "estimate": float(self.estimate),
                "error_bar": self.error_bar, "discrepancy": self.discrepancy, "noise": self.noise,
                "window": list(self.window)}


def _cond_inf(A):
    try:
        Ai = mpmath.inverse(A)
    except ZeroDivisionError:
        return mpmath.inf
    return mpmath.mnorm(A, "inf") * mpmath.mnorm(Ai, "inf")


def _triangular_peel(basis, values, labels, window_keys, *, noise_in=None, rel_tol, stage,
                     eps):
    """Peel ``values[r] = sum_k t_k basis[r][k]`` one dominant mode at a time.

    ``basis[r][k]`` decays faster in ``r`` for larger ``k``. Level ``k`` solves
    for ``t_k`` on the earliest window of ``L - k`` samples, with the remaining
    modes as nuisance terms, and repeats one sample later for the error bar.
    """
    L = len(labels)
    # only the earliest window and its one-step shift are used
    R = min(len(values), L + 1)
    if noise_in is None:
        noise_in = [mpmath.mpf(0)] * R
    est: list = []
    noise_est: list = []
    levels = []
    for k in range(L):
        size = L - k
        if R < size + 1:
            raise PeelingError(f"need {size + 1} samples at level {k}, have {R}", stage=stage, level=k)
        rhs, rhs_noise = [], []
        for r in range(R):
            den = basis[r][k]
            if den == 0:
                raise PeelingError("vanishing scale", stage=stage, level=k)
            acc = values[r]
            scale = abs(values[r])
            prop = noise_in[r]
            for l in range(k):
                t = basis[r][l] * est[l]
                acc -= t
                scale += abs(t)
                prop += abs(basis[r][l]) * noise_est[l]
            rhs.append(acc / den)
            rhs_noise.append((eps * scale + prop) / abs(den))

        def solve(start):
            rows = range(start, start + size)
            A = mpmath.matrix(size, size)
            b = mpmath.matrix(size, 1)
            for a_row, r in enumerate(rows):
                A[a_row, 0] = 1
                for c, l in enumerate(range(k + 1, L), start=1):
                    A[a_row, c] = basis[r][l] / basis[r][k]
                b[a_row] = rhs[r]
            sol = mpmath.lu_solve(A, b)
            # rounding bound from the column-scaled matrix; column 0 (the unknown) is all ones
            As = A.copy()
            for c in range(1, size):
                m = max(abs(As[r, c]) for r in range(size))
                if m:
                    for r in range(size):
                        As[r, c] /= m
            nz = _cond_inf(As) * max(rhs_noise[r] for r in rows)
            return sol[0], nz

        e0, n0 = solve(0)
        e1, n1 = solve(1)
        disc = abs(e0 - e1)
        noise = max(n0, n1)
        allowed = max(rel_tol * max(1, abs(e0)), 10 * noise)
        if disc > allowed:
            raise PeelingError(
                f"extrapolation discrepancy {float(disc):.3e} exceeds {float(allowed):.3e} "
                f"at level {k} ({labels[k]})", stage=stage, level=k)
        est.append(e0)
        noise_est.append(noise)
        levels.append(PeelLevel(k, tuple(labels[k]), e0, float(disc + noise), float(disc),
                                float(noise), tuple(window_keys[:size + 1])))
    return levels


@dataclass(frozen=True)
class Stage1Result:
    levels: tuple
    x_limit: tuple
    Y: tuple

    @property
    def S(self) -> list:
        return [lv.estimate for lv in self.levels]

    @property
    def exponents(self) -> list:
        return [lv.exponent for lv in self.levels]

    def brackets(self) -> list:
        """``B_j = x_lim^nu_j S_j``."""
        return [_mono(self.x_limit, lv.exponent) * lv.estimate for lv in self.levels]

    @property
    def max_error_bar(self) -> float:
        return max(lv.error_bar for lv in self.levels)


def _working_eps(precision):
    return mpmath.mpf(10) ** (-precision)


def stage1_peel(seq: ShadowSequence, values: Sequence, scale_minus: OrderedExponentScale,
                J: Optional[int] = None, *, x_limit=None, zero_tol: Optional[float] = None,
                peel_tol: Optional[float] = None) -> Stage1Result:
    """Separate ``values_i = sum_j X_i^nu_j S_j`` into the ``S_j``, ``j = 0..J``.

    ``X_i`` enters exactly. The tolerance on the window-shift discrepancy is
    ``max(peel_tol * max(1, |S_j|), 10 * propagated rounding bound)`` with
    ``peel_tol = 10 * zero_tol`` by default.
    """
    exps = scale_minus.exponents
    if J is not None:
        exps = exps[: J + 1]
    if len(values) != len(seq.indices):
        raise InputError("one value per sequence index is required")
    zt = default_zero_tol(seq.precision) if zero_tol is None else zero_tol
    pt = 10 * zt if peel_tol is None else peel_tol
    with mpmath.workdps(seq.precision):
        vals = [mpmath.mpf(v) for v in values]
        basis = [[_mono(seq.X[r], nu) for nu in exps] for r in range(len(vals))]
        levels = _triangular_peel(basis, vals, exps, seq.indices, rel_tol=mpmath.mpf(pt),
                                  stage=1, eps=_working_eps(seq.precision))
        xl = tuple(seq.x_minus if x_limit is None else (mpmath.mpf(v) for v in x_limit))
    return Stage1Result(tuple(levels), xl, seq.Y)


@dataclass(frozen=True)
class CoefficientEntry:
    nu: tuple
    w: tuple
    value: object  # mpf
    error_bar: float
    status: str    # planted | recovered | forced_zero

    def to_dict(self) -> dict:
        return {"nu": list(self.nu), "w": list(self.w), "value": float(self.value),
                "error_bar": self.error_bar, "status": self.status}


@dataclass(frozen=True)
class CoefficientTable:
    degree: int
    n_minus: int
    n_plus: int
    entries: tuple
    e: Optional[object] = None

    def get(self, nu, w):
        for en in self.entries:
            if en.nu == tuple(nu) and en.w == tuple(w):
                return en.value
        raise KeyError((nu, w))

    def as_dict(self) -> dict:
        return {(en.nu, en.w): en.value for en in self.entries}

    @property
    def max_nonconstant(self) -> float:
        vals = [abs(en.value) for en in self.entries if sum(en.nu) + sum(en.w) > 0]
        return float(max(vals)) if vals else 0.0

    @property
    def max_error_bar(self) -> float:
        return max((en.error_bar for en in self.entries), default=0.0)

    def to_polynomial(self) -> Polynomial:
        n = self.n_minus + self.n_plus
        return Polynomial(n, {en.nu + en.w: float(en.value) for en in self.entries if en.value != 0})

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "e": None if self.e is None else float(self.e),
            "max_nonconstant": self.max_nonconstant,
            "entries": [en.to_dict() for en in self.entries],
        }


def table_index(n_minus: int, n_plus: int, degree: int) -> list:
    """Every ``(nu, w)`` with ``|nu| + |w| <= degree`` in graded order."""
    return [(e[:n_minus], e[n_minus:]) for e in monomials_up_to(n_minus + n_plus, degree)]


def planted_table(coeffs: dict, n_minus: int, n_plus: int, degree: int) -> CoefficientTable:
    entries = []
    for nu, w in table_index(n_minus, n_plus, degree):
        entries.append(CoefficientEntry(nu, w, mpmath.mpf(coeffs.get((nu, w), 0)), 0.0, "planted"))
    return CoefficientTable(degree, n_minus, n_plus, tuple(entries), coeffs.get(((0,) * n_minus, (0,) * n_plus)))


def random_polynomial(n_minus: int, n_plus: int, degree: int, seed: int) -> Polynomial:
    """Seeded candidate with coefficients uniform in [-1, 1] on every monomial of degree <= ``degree``."""
    rng = np.random.default_rng(seed)
    mons = monomials_up_to(n_minus + n_plus, degree)
    vals = rng.uniform(-1.0, 1.0, size=len(mons))
    return Polynomial(n_minus + n_plus, {e: float(v) for e, v in zip(mons, vals)})


def stage2_peel(stage1: Sequence[Stage1Result], n_values: Sequence[int], delta, C,
                degree: int, *, precision: int, zero_tol: Optional[float] = None,
                peel_tol: Optional[float] = None) -> CoefficientTable:
    """Separate each ``S_nu(Y(n)) = sum_w a_{nu,w} C^w delta^(n w)`` over ``n``.

    Only ``w`` with ``|nu| + |w| <= degree`` are modelled. Division by ``C^w``
    gives the coefficients.
    """
    if len(stage1) != len(n_values):
        raise InputError("one stage-1 result per n is required")
    zt = default_zero_tol(precision) if zero_tol is None else zero_tol
    pt = 10 * zt if peel_tol is None else peel_tol
    n_plus = len(C)
    first = stage1[0]
    n_minus = len(first.exponents[0])
    entries = {}
    with mpmath.workdps(precision):
        dl = [mpmath.mpf(v) for v in delta]
        Cm = [mpmath.mpf(v) for v in C]
        for j, nu in enumerate(first.exponents):
            top = degree - sum(nu)
            if top < 0:
                continue
            xm = abs(_mono(first.x_limit, nu))
            if xm < COEFF_FLOOR:
                raise PeelingError(f"|x_lim^{nu}| = {float(xm):.3e} below {COEFF_FLOOR}: admissibility "
                                   "violation", stage=2, level=j)
            wscale = scale_covering_degree(dl, top).exponents if n_plus else [()]
            vals = [res.levels[j].estimate for res in stage1]
            noise = [mpmath.mpf(res.levels[j].error_bar) for res in stage1]
            basis = [[_mono([d**n for d in dl], w) for w in wscale] for n in n_values]
            levels = _triangular_peel(basis, vals, wscale, list(n_values), noise_in=noise,
                                      rel_tol=mpmath.mpf(pt), stage=2,
                                      eps=_working_eps(precision))
            for lv, w in zip(levels, wscale):
                cw = _mono(Cm, w)
                if abs(cw) < COEFF_FLOOR:
                    raise PeelingError(f"|C^{w}| below {COEFF_FLOOR}", stage=2, level=j)
                a = lv.estimate / cw
                bar = lv.error_bar / float(abs(cw))
                status = "forced_zero" if (sum(nu) + sum(w) > 0 and abs(a) <= zt) else "recovered"
                entries[(tuple(nu), tuple(w))] = CoefficientEntry(tuple(nu), tuple(w), a, bar, status)
    out = []
    for nu, w in table_index(n_minus, n_plus, degree):
        if (nu, w) not in entries:
            raise PeelingError(f"coefficient {(nu, w)} not reached; enlarge the scale", stage=2)
        out.append(entries[(nu, w)])
    e0 = entries[((0,) * n_minus, (0,) * n_plus)].value
    return CoefficientTable(degree, n_minus, n_plus, tuple(out), e0)


def global_solve(sequences: Sequence[ShadowSequence], values: Sequence[Sequence], degree: int,
                 precision: int) -> dict:
    """All coefficients at once by column-scaled least squares (cross-check)."""
    seq0 = sequences[0]
    idx = table_index(seq0.n_minus, seq0.n_plus, degree)
    with mpmath.workdps(precision):
        rows, rhs = [], []
        for seq, vals in zip(sequences, values):
            for k in range(len(seq.indices)):
                N = seq.N(k)
                rows.append([_mono(N, nu + w) for nu, w in idx])
                rhs.append(mpmath.mpf(vals[k]))
        A = mpmath.matrix(rows)
        scale = [max(abs(A[r, c]) for r in range(A.rows)) or mpmath.mpf(1) for c in range(A.cols)]
        for c in range(A.cols):
            for r in range(A.rows):
                A[r, c] /= scale[c]
        sol, _ = mpmath.qr_solve(A, mpmath.matrix(rhs))
        return {key: sol[c] / scale[c] for c, key in enumerate(idx)}


@dataclass(frozen=True)
class PeelRun:
    table: CoefficientTable
    stage1: tuple
    n_values: tuple

    @property
    def stage1_max_error(self) -> float:
        return max(r.max_error_bar for r in self.stage1)

    @property
    def stage2_max_error(self) -> float:
        return self.table.max_error_bar


def peel_candidate(sequences: Sequence[ShadowSequence], values: Sequence[Sequence],
                   n_values: Sequence[int], delta, C, degree: int, scale_minus: OrderedExponentScale,
                   *, x_limit=None, zero_tol=None, peel_tol=None) -> PeelRun:
    """Stage 1 for every ``n`` followed by stage 2."""
    prec = sequences[0].precision
    s1 = tuple(stage1_peel(seq, vals, scale_minus, x_limit=x_limit, zero_tol=zero_tol,
                           peel_tol=peel_tol) for seq, vals in zip(sequences, values))
    table = stage2_peel(s1, n_values, delta, C, degree, precision=prec, zero_tol=zero_tol,
                        peel_tol=peel_tol)
    return PeelRun(table, s1, tuple(n_values))


# ---------------------------------------------------------------------------
# certificate


@dataclass(frozen=True)
class HypothesisItem:
    name: str
    status: str  # pass | fail | not_applicable | not_evaluated
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "details": self.details}


@dataclass
class ObstructionSetup:
    """Everything ``certify`` needs, in linearizing (or normal-form) coordinates."""

    map_name: str
    params: dict
    hypotheses: list
    sequence_factory: Optional[Callable] = None  # Y -> ShadowSequence
    lam_minus: tuple = ()
    lam_plus: tuple = ()
    x_limit: Optional[tuple] = None
    precision: int = 50
    provenance: str = "linear"


@dataclass(frozen=True)
class ObstructionCertificate:
    map_name: str
    params: dict
    hypotheses: tuple
    degree: int
    verdict: str
    failed: tuple = ()
    delta: Optional[tuple] = None
    C: Optional[tuple] = None
    scale_minus: Optional[OrderedExponentScale] = None
    scale_delta: Optional[OrderedExponentScale] = None
    stage1_max_error: Optional[float] = None
    stage2_max_error: Optional[float] = None
    precision: int = 50
    zero_tol: float = ZERO_TOL_MP
    peel_tol: float = 10 * ZERO_TOL_MP
    controls: tuple = ()
    round_trips: tuple = ()
    global_check: Optional[float] = None
    oracle: Optional[dict] = None
    i_range: Optional[tuple] = None
    n_range: Optional[tuple] = None
    seeds: tuple = ()
    spot_checks: tuple = ()
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "map": {"name": self.map_name, "params": {k: str(v) for k, v in self.params.items()}},
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "degree": self.degree,
            "verdict": self.verdict,
            "failed_hypotheses": list(self.failed),
            "delta": None if self.delta is None else [float(v) for v in self.delta],
            "C": None if self.C is None else [float(v) for v in self.C],
            "scale_minus": None if self.scale_minus is None else self.scale_minus.to_dict(),
            "scale_delta": None if self.scale_delta is None else self.scale_delta.to_dict(),
            "stage1_max_error": self.stage1_max_error,
            "stage2_max_error": self.stage2_max_error,
            "precision_digits": self.precision,
            "tolerances": {"zero_tol": self.zero_tol, "peel_tol": self.peel_tol,
                           "recovery_tol": RECOVERY_TOL, "spot_tol": SPOT_TOL},
            "controls": list(self.controls),
            "round_trips": list(self.round_trips),
            "global_check_max_difference": self.global_check,
            "oracle": self.oracle,
            "i_range": None if self.i_range is None else list(self.i_range),
            "n_range": None if self.n_range is None else list(self.n_range),
            "seeds": list(self.seeds),
            "spot_checks": [s.to_dict() for s in self.spot_checks],
            "notes": list(self.notes),
        }


def _candidate_values(seqs, Q=None, const=None):
    if Q is not None:
        return [s.values(Q) for s in seqs]
    with mpmath.workdps(seqs[0].precision):
        return [[mpmath.mpf(const)] * len(s.indices) for s in seqs]


def _relerr(a, b):
    return float(abs(a - b) / abs(b)) if b != 0 else float(abs(a))


def certify(setup: ObstructionSetup, degree: int, *, delta: Sequence[float], C: Sequence[float],
            n_values: Optional[Sequence[int]] = None, i_range=None, candidates: int = 3,
            seed: int = 0, zero_tol: Optional[float] = None, peel_tol: Optional[float] = None,
            oracle_report=None, global_check: Optional[bool] = None) -> ObstructionCertificate:
    """Run the peeling on seeded candidates and the constant control; issue a verdict."""
    zt = default_zero_tol(setup.precision) if zero_tol is None else zero_tol
    pt = 10 * zt if peel_tol is None else peel_tol
    hyps = tuple(setup.hypotheses)
    failed = tuple(h.name for h in hyps if h.status == "fail")
    oracle = None if oracle_report is None else oracle_report.to_dict()
    base = dict(map_name=setup.map_name, params=dict(setup.params), hypotheses=hyps, degree=degree,
                precision=setup.precision, zero_tol=zt, peel_tol=pt, oracle=oracle,
                seeds=(seed,))
    if failed:
        return ObstructionCertificate(verdict="hypotheses_not_met", failed=failed, **base)
    if setup.sequence_factory is None:
        raise InputError("setup has no shadow sequence factory")
    nm, npl = len(setup.lam_minus), len(setup.lam_plus)
    scale_minus = scale_covering_degree([abs(float(v)) for v in setup.lam_minus], degree)
    scale_delta = scale_covering_degree(list(delta), degree)
    if n_values is None:
        n_values = list(range(scale_delta.count + 1))
    n_values = list(n_values)
    with mpmath.workdps(setup.precision):
        seqs = []
        for n in n_values:
            Y = [mpmath.mpf(c) * mpmath.mpf(d) ** n for c, d in zip(C, delta)]
            seqs.append(setup.sequence_factory(Y, i_range))
    spot = tuple(s for seq in seqs[:1] for s in seq.spot_checks)
    anchor = list(seqs[0].x_minus) + [mpmath.mpf(0)] * npl
    notes = []
    s1_err, s2_err = 0.0, 0.0
    controls, trips = [], []
    all_ok = True
    gdiff = None
    run_global = global_check if global_check is not None else math.comb(nm + npl + degree, degree) <= 45
    for c in range(candidates):
        Q = random_polynomial(nm, npl, degree, seed + c)
        planted = {(e[:nm], e[nm:]): mpmath.mpf(v) for e, v in Q.items()}
        vals = _candidate_values(seqs, Q=Q)
        run = peel_candidate(seqs, vals, n_values, delta, C, degree, scale_minus,
                             x_limit=setup.x_limit, zero_tol=zt, peel_tol=pt)
        worst = max(_relerr(en.value, planted.get((en.nu, en.w), 0)) for en in run.table.entries)
        ok = worst <= RECOVERY_TOL
        trips.append({"seed": seed + c, "max_relative_error": worst, "passed": ok})
        all_ok &= ok
        s1_err = max(s1_err, run.stage1_max_error)
        s2_err = max(s2_err, run.stage2_max_error)
        if run_global and c == 0:
            g = global_solve(seqs, vals, degree, setup.precision)
            gdiff = max(_relerr(g[k], planted.get(k, 0)) for k in g)
        # under the integral hypothesis every value equals e = Q(h_-)
        with mpmath.workdps(setup.precision):
            e = Q.evaluate(anchor)
        crun = peel_candidate(seqs, _candidate_values(seqs, const=e), n_values, delta, C, degree,
                              scale_minus, x_limit=setup.x_limit, zero_tol=zt, peel_tol=pt)
        const_err = float(abs(crun.table.e - e))
        forced = crun.table.max_nonconstant <= zt and const_err <= zt * max(1.0, float(abs(e)))
        controls.append({"seed": seed + c, "e": float(e), "a00_error": const_err,
                         "max_nonconstant": crun.table.max_nonconstant, "forced_trivial": forced})
        all_ok &= forced
        s1_err = max(s1_err, crun.stage1_max_error)
        s2_err = max(s2_err, crun.stage2_max_error)
    verdict = f"forced_trivial_to_degree_{degree}"
    if not all(s.passed for s in spot):
        verdict = "inconclusive"
        notes.append("direct-iteration spot check failed")
    elif not all_ok:
        verdict = "inconclusive"
        notes.append("round trip or constant control failed")
    elif oracle_report is not None and (oracle_report.indeterminate or not oracle_report.constants_only):
        verdict = "oracle_disagreement"
        notes.append(f"oracle kernel dimension {oracle_report.dimension}"
                     + (" (indeterminate)" if oracle_report.indeterminate else ""))
    seq0 = seqs[0]
    return ObstructionCertificate(
        verdict=verdict, delta=tuple(delta), C=tuple(C), scale_minus=scale_minus,
        scale_delta=scale_delta, stage1_max_error=s1_err, stage2_max_error=s2_err,
        controls=tuple(controls), round_trips=tuple(trips), global_check=gdiff,
        i_range=(seq0.indices[0], seq0.indices[-1]), n_range=(n_values[0], n_values[-1]),
        spot_checks=spot, notes=tuple(notes), **base)


__all__ = [
    "CoefficientEntry",
    "CoefficientTable",
    "HypothesisItem",
    "NormalFormReport",
    "ObstructionCertificate",
    "ObstructionSetup",
    "PeelLevel",
    "PeelRun",
    "RemainderLimit",
    "ShadowSequence",
    "SpotCheck",
    "Stage1Result",
    "build_normal_form_sequence",
    "build_shadow_sequence",
    "certify",
    "check_normal_form",
    "default_zero_tol",
    "global_solve",
    "peel_candidate",
    "planted_table",
    "random_polynomial",
    "remainder_limit",
    "stage1_peel",
    "stage2_peel",
    "table_index",
]
