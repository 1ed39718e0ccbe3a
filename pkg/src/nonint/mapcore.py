"""Polynomial diffeomorphisms: evaluation, iteration, fixed points, saddles.

Points are numpy float arrays in double precision mode and lists of
``mpmath.mpf`` in high precision mode; every operation dispatches on the type
of the point it receives, so the precision is chosen by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import mpmath
import numpy as np
import yaml

from .errors import (
    DegeneracyError,
    HyperbolicityError,
    InputError,
    NotFoundError,
    OrbitError,
)
from .polynomial import Polynomial, format_coefficient, parse_coefficient

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 100
HYPERBOLICITY_TOL = 1e-9


def is_mp(x) -> bool:
    return len(x) > 0 and isinstance(x[0], mpmath.mpf)


def to_mp(x) -> list:
    return [mpmath.mpf(v) if not isinstance(v, Fraction) else mpmath.mpf(v.numerator) / v.denominator
            for v in x]


def vnorm(x):
    if is_mp(x):
        return mpmath.sqrt(mpmath.fsum(v * v for v in x))
    return float(np.linalg.norm(np.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class AnalyticMap:
    """A polynomial map of R^n, optionally with a polynomial inverse."""

    dim: int
    components: tuple
    inverse: Optional[tuple] = None
    name: str = "map"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 2:
            raise InputError("dimension must be at least 2")
        comps = tuple(self.components)
        if len(comps) != self.dim or any(p.nvars != self.dim for p in comps):
            raise InputError("need dim components, each a polynomial in dim variables")
        object.__setattr__(self, "components", comps)
        if self.inverse is not None:
            inv = tuple(self.inverse)
            if len(inv) != self.dim or any(p.nvars != self.dim for p in inv):
                raise InputError("inverse must have dim components in dim variables")
            object.__setattr__(self, "inverse", inv)
        derivs = tuple(tuple(p.derivative(j) for j in range(self.dim)) for p in comps)
        object.__setattr__(self, "_derivs", derivs)
        if self.inverse is not None:
            inv_derivs = tuple(tuple(p.derivative(j) for j in range(self.dim)) for p in self.inverse)
            object.__setattr__(self, "_inv_derivs", inv_derivs)

    def __call__(self, x):
        return eval_map(self, x)

    @property
    def has_inverse(self) -> bool:
        return self.inverse is not None

    def inverse_map(self) -> "AnalyticMap":
        """The inverse as an :class:`AnalyticMap` (requires polynomial inverse)."""
        if self.inverse is None:
            raise OrbitError(f"map {self.name!r} has no polynomial inverse")
        return AnalyticMap(self.dim, self.inverse, self.components, name=f"{self.name}^-1",
                           params=dict(self.params))

    @property
    def degree(self) -> int:
        return max(p.degree for p in self.components)


def _eval_components(comps, x):
    if is_mp(x):
        return [p.evaluate(x) for p in comps]
    if isinstance(x, np.ndarray) and x.ndim == 2:
        cols = [x[:, j] for j in range(x.shape[1])]
        return np.stack([np.broadcast_to(p.evaluate(cols), x.shape[:1]) for p in comps], axis=1)
    xs = [float(v) for v in x]
    return np.array([p.evaluate(xs) for p in comps])


def eval_map(m: AnalyticMap, x):
    """Evaluate ``m`` at ``x``; ``x`` may also be an ``(npts, dim)`` float array."""
    shape_dim = x.shape[-1] if isinstance(x, np.ndarray) else len(x)
    if shape_dim != m.dim:
        raise InputError(f"point has dimension {shape_dim}, map has dimension {m.dim}")
    return _eval_components(m.components, x)


def eval_inverse(m: AnalyticMap, x):
    if m.inverse is None:
        return newton_preimage(m, x)
    return _eval_components(m.inverse, x)


def jacobian(m: AnalyticMap, x):
    """Df(x) by exact differentiation of the components."""
    return _jac(m._derivs, x, m.dim)


def inverse_jacobian(m: AnalyticMap, x):
    """D(f^-1)(x); uses the inverse components or inverts Df at f^-1(x)."""
    if m.inverse is not None:
        return _jac(m._inv_derivs, x, m.dim)
    y = eval_inverse(m, x)
    J = jacobian(m, y)
    return mpmath.inverse(J) if is_mp(x) else np.linalg.inv(J)


def _jac(derivs, x, n):
    if is_mp(x):
        J = mpmath.matrix(n, n)
        for i in range(n):
            for j in range(n):
                J[i, j] = derivs[i][j].evaluate(x)
        return J
    xs = [float(v) for v in x]
    return np.array([[derivs[i][j].evaluate(xs) for j in range(n)] for i in range(n)])


def _solve(J, r):
    if isinstance(J, mpmath.matrix):
        try:
            return list(mpmath.lu_solve(J, mpmath.matrix(r)))
        except ZeroDivisionError as exc:
            raise DegeneracyError("singular Newton matrix") from exc
    try:
        return np.linalg.solve(J, np.asarray(r, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("singular Newton matrix") from exc


def _default_tol(x):
    if is_mp(x):
        return mpmath.mpf(10) ** (-(mpmath.mp.dps - 5))
    return NEWTON_TOL


def newton_preimage(m: AnalyticMap, x, guess=None, max_iter: int = 50):
    """Solve ``f(z) = x`` by Newton's method (fallback inverse)."""
    mp_mode = is_mp(x)
    z = list(guess) if guess is not None else list(x)
    if not mp_mode:
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
    tol = _default_tol(x)
    for _ in range(max_iter):
        fz = eval_map(m, z)
        r = [a - b for a, b in zip(fz, x)]
        if vnorm(r) <= tol * (1 + vnorm(x)):
            return z
        step = _solve(jacobian(m, z), r)
        z = [a - b for a, b in zip(z, step)] if mp_mode else z - step
    raise OrbitError("Newton inversion did not converge")


def iterate(m: AnalyticMap, x, k: int):
    """``f^k(x)``; negative ``k`` uses the inverse (or Newton inversion)."""
    if k == 0:
        return list(x) if is_mp(x) else np.array(x, dtype=float)
    point = x
    for step in range(abs(k)):
        try:
            point = eval_map(m, point) if k > 0 else eval_inverse(m, point)
        except OrbitError as exc:
            raise OrbitError(f"orbit failed at step {step + 1}: {exc}", step=step + 1) from exc
    return point


def find_fixed_point(m: AnalyticMap, guess, tol=None, max_iter: int = NEWTON_MAX_ITER):
    """Newton iteration on ``f(x) - x``.

    Stops when ``|f(x) - x| <= tol (1 + |x|)``; ``tol`` defaults to ``1e-12``
    in double precision and to ``10**-(dps-5)`` in mpf mode.
    """
    if len(guess) != m.dim:
        raise InputError("guess has wrong dimension")
    mp_mode = is_mp(guess)
    x = list(guess) if mp_mode else np.asarray(guess, dtype=float)
    tol = _default_tol(x) if tol is None else tol
    eye = mpmath.eye(m.dim) if mp_mode else np.eye(m.dim)
    for it in range(max_iter):
        r = [a - b for a, b in zip(eval_map(m, x), x)]
        res = vnorm(r)
        log.debug("fixed point Newton step %d residual %s", it, mpmath.nstr(res, 5) if mp_mode else f"{res:.3e}")
        if res <= tol * (1 + vnorm(x)):
            return x
        J = jacobian(m, x) - eye
        step = _solve(J, r)
        x = [a - b for a, b in zip(x, step)] if mp_mode else x - step
        if not mp_mode and not np.all(np.isfinite(x)):
            break
    raise NotFoundError(f"fixed point Newton did not converge in {max_iter} steps")


@dataclass(frozen=True, eq=False)
class Saddle:
    """A hyperbolic fixed point with its spectrum split by modulus.

    ``*_vectors`` are unit eigenvectors (columns) in eigenvalue order and are
    used as the linear part of manifold charts; ``*_basis`` are orthonormal
    bases of the same subspaces. Complex pairs are stored as real 2x2 blocks:
    the vectors are then the real and imaginary parts and ``complex_pairs``
    is true.
    """

    point: object
    stable_eigenvalues: tuple
    unstable_eigenvalues: tuple
    stable_vectors: object
    unstable_vectors: object
    stable_basis: object
    unstable_basis: object
    complex_pairs: bool = False
    defective: bool = False

    @property
    def n_minus(self) -> int:
        return len(self.stable_eigenvalues)

    @property
    def n_plus(self) -> int:
        return len(self.unstable_eigenvalues)

    @property
    def dim(self) -> int:
        return self.n_minus + self.n_plus

    def eigenvalues(self, side: str) -> tuple:
        return self.stable_eigenvalues if side == "stable" else self.unstable_eigenvalues

    def vectors(self, side: str):
        return self.stable_vectors if side == "stable" else self.unstable_vectors

    def eigen_matrix(self):
        """Columns: stable then unstable eigenvectors (float)."""
        return np.hstack([np.asarray(self.stable_vectors, dtype=float).reshape(self.dim, -1),
                          np.asarray(self.unstable_vectors, dtype=float).reshape(self.dim, -1)])

    def to_eigen_coordinates(self, points):
        """Coordinates ``(x, y)`` of ambient points in the eigenbasis centred at ``p``."""
        E = self.eigen_matrix()
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.point, dtype=float)
        return np.linalg.solve(E, pts.T).T

    def from_eigen_coordinates(self, coords):
        E = self.eigen_matrix()
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        return c @ E.T + np.asarray(self.point, dtype=float)


def _eig2_closed_form(J):
    """Real distinct eigenpairs of a 2x2 matrix, or None when complex/repeated."""
    a, b, c, d = J[0, 0], J[0, 1], J[1, 0], J[1, 1]
    tr, det = a + d, a * d - b * c
    disc = tr * tr - 4 * det
    if disc <= 0:
        return None
    sq = np.sqrt(disc)
    lam1 = (tr + np.copysign(sq, tr)) / 2 if tr != 0 else sq / 2
    lam2 = det / lam1 if lam1 != 0 else (tr - np.copysign(sq, tr)) / 2
    vals = [lam1, lam2]
    vecs = []
    for lam in vals:
        v1 = np.array([b, lam - a])
        v2 = np.array([lam - d, c])
        v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
        if np.linalg.norm(v) == 0:
            v = np.array([1.0, 0.0]) if abs(lam - a) <= abs(lam - d) else np.array([0.0, 1.0])
        vecs.append(v / np.linalg.norm(v))
    return np.array(vals), np.array(vecs).T


def _normalize_sign(v):
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def classify_saddle(m: AnalyticMap, p) -> Saddle:
    """Eigen-decomposition of Df(p), partitioned into stable and unstable parts.

    Raises :class:`HyperbolicityError` if any eigenvalue has modulus within
    ``1e-9`` of one. With an mpf point the decomposition is done by
    ``mpmath.eig`` at the working precision.
    """
    if len(p) != m.dim:
        raise InputError("point has wrong dimension")
    if is_mp(p):
        return _classify_saddle_mp(m, p)
    p = np.asarray(p, dtype=float)
    fp = eval_map(m, p)
    if np.linalg.norm(fp - p) > 1e-9 * (1 + np.linalg.norm(p)):
        raise InputError(f"point {p} is not a fixed point (residual {np.linalg.norm(fp - p):.3e})")
    J = jacobian(m, p)
    closed = _eig2_closed_form(J) if m.dim == 2 else None
    if closed is not None:
        vals, vecs = closed
    else:
        vals, vecs = np.linalg.eig(J)
    mods = np.abs(vals)
    if np.any(np.abs(mods - 1) <= HYPERBOLICITY_TOL):
        raise HyperbolicityError(f"eigenvalue moduli {mods} not hyperbolic")
    defective = False
    if np.linalg.cond(vecs) > 1e8:
        defective = True
        log.warning("Df(p) is (nearly) defective: repeated eigenvalue / Jordan block")
    complex_pairs = bool(np.any(np.abs(np.imag(vals)) > 1e-14 * (1 + mods)))

    def side(mask):
        idx = [i for i in np.argsort(-mods) if mask[i]]
        out_vals, cols, seen = [], [], set()
        for i in idx:
            if i in seen:
                continue
            lam = vals[i]
            if abs(np.imag(lam)) > 1e-14 * (1 + abs(lam)):
                # pair with its conjugate; store real 2x2 block basis
                j = min((k for k in idx if k not in seen and k != i),
                        key=lambda k: abs(vals[k] - np.conj(lam)))
                seen.update((i, j))
                out_vals.extend([complex(lam), complex(vals[j])])
                v = vecs[:, i]
                cols.extend([np.real(v), np.imag(v)])
            else:
                seen.add(i)
                out_vals.append(float(np.real(lam)))
                cols.append(_normalize_sign(np.real(vecs[:, i]) / np.linalg.norm(np.real(vecs[:, i]))))
        V = np.array(cols).T if cols else np.zeros((m.dim, 0))
        Q = np.linalg.qr(V)[0] if cols else V
        if cols:
            Q = np.column_stack([_normalize_sign(Q[:, k]) for k in range(Q.shape[1])]) + 0.0
            V = V + 0.0
        return tuple(out_vals), V, Q

    s_vals, s_vecs, s_basis = side(mods < 1)
    u_vals, u_vecs, u_basis = side(mods > 1)
    # stable ordered by decreasing modulus (weakest contraction first)
    return Saddle(
        point=p,
        stable_eigenvalues=s_vals,
        unstable_eigenvalues=tuple(reversed(u_vals)),
        stable_vectors=s_vecs,
        unstable_vectors=u_vecs[:, ::-1] if u_vecs.shape[1] else u_vecs,
        stable_basis=s_basis,
        unstable_basis=u_basis[:, ::-1] if u_basis.shape[1] else u_basis,
        complex_pairs=complex_pairs,
        defective=defective,
    )


def _classify_saddle_mp(m: AnalyticMap, p) -> Saddle:
    J = jacobian(m, p)
    vals, vecs = mpmath.eig(J)
    mods = [abs(v) for v in vals]
    if any(abs(md - 1) <= HYPERBOLICITY_TOL for md in mods):
        raise HyperbolicityError("eigenvalue moduli not hyperbolic")
    if any(abs(mpmath.im(v)) > mpmath.mpf(10) ** (-(mpmath.mp.dps // 2)) for v in vals):
        raise InputError("high precision saddles with complex eigenvalues are not supported")
    n = m.dim
    cols = []
    for i in range(n):
        v = [mpmath.re(vecs[k, i]) for k in range(n)]
        nv = mpmath.sqrt(mpmath.fsum(t * t for t in v))
        v = [t / nv for t in v]
        kmax = max(range(n), key=lambda k: abs(v[k]))
        if v[kmax] < 0:
            v = [-t for t in v]
        cols.append(v)
    reals = [mpmath.re(v) for v in vals]
    stable = sorted([i for i in range(n) if mods[i] < 1], key=lambda i: -mods[i])
    unstable = sorted([i for i in range(n) if mods[i] > 1], key=lambda i: mods[i])

    def mat(idx):
        M = mpmath.matrix(n, len(idx)) if idx else mpmath.matrix(n, 1) * 0
        for c, i in enumerate(idx):
            for k in range(n):
                M[k, c] = cols[i][k]
        return M

    return Saddle(
        point=list(p),
        stable_eigenvalues=tuple(reals[i] for i in stable),
        unstable_eigenvalues=tuple(reals[i] for i in unstable),
        stable_vectors=mat(stable),
        unstable_vectors=mat(unstable),
        stable_basis=None,
        unstable_basis=None,
    )


# --------------------------------------------------------------------------
# constructors and file format


def _poly(n, rows):
    return Polynomial.from_rows(n, rows)


def henon(a="1.4", b="0.3") -> AnalyticMap:
    """(x, y) -> (1 + y - a x^2, b x) with its polynomial inverse."""
    A, B = parse_coefficient(str(a)), parse_coefficient(str(b))
    comps = (
        Polynomial(2, {(0, 0): Fraction(1), (0, 1): Fraction(1), (2, 0): -A}),
        Polynomial(2, {(1, 0): B}),
    )
    # f^-1(u, v) = (v / b, u - 1 + a (v / b)^2)
    inv = (
        Polynomial(2, {(0, 1): 1 / B}),
        Polynomial(2, {(1, 0): Fraction(1), (0, 0): Fraction(-1), (0, 2): A / (B * B)}),
    )
    return AnalyticMap(2, comps, inv, name=f"henon(a={a}, b={b})", params={"a": str(a), "b": str(b)})


def diagonal_linear(multipliers, name="linear") -> AnalyticMap:
    """x_k -> multipliers[k] * x_k."""
    n = len(multipliers)
    lam = [parse_coefficient(str(v)) if not isinstance(v, Fraction) else v for v in multipliers]
    comps, inv = [], []
    for k in range(n):
        e = [0] * n
        e[k] = 1
        comps.append(Polynomial(n, {tuple(e): lam[k]}))
        inv.append(Polynomial(n, {tuple(e): 1 / lam[k]}))
    return AnalyticMap(n, tuple(comps), tuple(inv), name=name)


def linear_saddle() -> AnalyticMap:
    """L(x, y) = (x/2, 2y)."""
    return diagonal_linear([Fraction(1, 2), Fraction(2)], name="linear-saddle")


def map_from_dict(doc: dict) -> AnalyticMap:
    try:
        n = int(doc["dimension"])
        comps = tuple(_poly(n, rows) for rows in doc["components"])
        inv = doc.get("inverse")
        inverse = tuple(_poly(n, rows) for rows in inv) if inv else None
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed map definition: {exc}") from exc
    if len(comps) != n:
        raise InputError(f"expected {n} components, got {len(comps)}")
    m = AnalyticMap(n, comps, inverse, name=str(doc.get("name", "map")),
                    params={str(k): str(v) for k, v in (doc.get("params") or {}).items()})
    if inverse is not None:
        check_inverse(m)
    return m


def map_to_dict(m: AnalyticMap) -> dict:
    doc = {
        "name": m.name,
        "dimension": m.dim,
        "components": [p.to_rows() for p in m.components],
    }
    if m.params:
        doc["params"] = dict(m.params)
    if m.inverse is not None:
        doc["inverse"] = [p.to_rows() for p in m.inverse]
    return doc


def load_map(path) -> AnalyticMap:
    """Read a YAML map definition (see README for the format)."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read map file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"map file {path} does not contain a mapping")
    return map_from_dict(doc)


def dump_map(m: AnalyticMap) -> str:
    return yaml.safe_dump(map_to_dict(m), sort_keys=False, default_flow_style=None)


def check_inverse(m: AnalyticMap, npts: int = 100, seed: int = 0, tol: float = 1e-10) -> float:
    """Max |f(f^-1(x)) - x| on random points of the unit box; raises if above ``tol``."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(npts, m.dim))
    back = _eval_components(m.components, _eval_components(m.inverse, pts))
    err = float(np.max(np.abs(back - pts) / (1 + np.abs(pts))))
    if err > tol:
        raise InputError(f"declared inverse of {m.name!r} fails identity check (error {err:.3e})")
    return err


__all__ = [
    "AnalyticMap",
    "Saddle",
    "classify_saddle",
    "diagonal_linear",
    "dump_map",
    "eval_inverse",
    "eval_map",
    "find_fixed_point",
    "format_coefficient",
    "henon",
    "inverse_jacobian",
    "is_mp",
    "iterate",
    "jacobian",
    "linear_saddle",
    "load_map",
    "map_from_dict",
    "map_to_dict",
    "newton_preimage",
    "to_mp",
    "vnorm",
]
