"""Brute-force detection of polynomial first integrals.

The linear operator ``Q -> Q o f - Q`` on polynomials of degree ``<= D`` is
built by exact composition in the monomial basis and evaluated on sample
points; its numerical kernel spans the polynomial integrals of degree
``<= D`` seen on the sampled region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .mapcore import AnalyticMap, eval_map
from .polynomial import Polynomial, monomials_up_to

SVD_REL_THRESHOLD = 1e-9
INDETERMINATE_BAND = (1e-7, 1e-3)


@dataclass(frozen=True)
class SampleSpec:
    box: tuple = (-1.0, 1.0)
    n_box: int = 250
    n_orbit_starts: int = 25
    orbit_length: int = 10
    seed: int = 0

    def to_dict(self) -> dict:
        return {"box": list(self.box), "n_box": self.n_box, "n_orbit_starts": self.n_orbit_starts,
                "orbit_length": self.orbit_length, "seed": self.seed}


@dataclass(frozen=True)
class KernelReport:
    degree: int
    monomials: tuple
    basis: tuple              # orthonormal coefficient vectors, constant first
    reduced_basis: tuple      # row-reduced integrals with unit pivots
    singular_values: tuple    # descending, of the column-scaled matrix
    sample_count: int
    sample_spec: SampleSpec
    indeterminate: bool = False
    cut_ratio: Optional[float] = None

    @property
    def dimension(self) -> int:
        return len(self.basis)

    @property
    def constants_only(self) -> bool:
        return not self.indeterminate and self.dimension == 1

    def polynomials(self, reduced: bool = True) -> list:
        rows = self.reduced_basis if reduced else self.basis
        n = len(self.monomials[0]) if self.monomials else 0
        return [coefficients_to_polynomial(n, self.monomials, r) for r in rows]

    def to_dict(self) -> dict:
        def table(rows):
            return [[[list(e), float(c)] for e, c in zip(self.monomials, r) if abs(c) > 1e-12]
                    for r in rows]
        return {
            "degree": self.degree,
            "dimension": self.dimension,
            "constants_only": self.constants_only,
            "indeterminate": self.indeterminate,
            "cut_ratio": self.cut_ratio,
            "basis": table(self.basis),
            "reduced_basis": table(self.reduced_basis),
            "singular_values": [float(s) for s in self.singular_values],
            "sample_count": self.sample_count,
            "sample_spec": self.sample_spec.to_dict(),
        }


def coefficients_to_polynomial(n: int, monomials, coeffs, tol: float = 0.0) -> Polynomial:
    return Polynomial(n, {e: float(c) for e, c in zip(monomials, coeffs) if abs(c) > tol})


def draw_samples(m: AnalyticMap, spec: SampleSpec) -> np.ndarray:
    """Uniform box points plus bounded forward orbit segments (seeded)."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.box
    pts = [rng.uniform(lo, hi, size=(spec.n_box, m.dim))]
    starts = rng.uniform(lo, hi, size=(spec.n_orbit_starts, m.dim))
    bound = 10.0 * max(abs(lo), abs(hi))
    x = starts
    for _ in range(spec.orbit_length):
        with np.errstate(over="ignore", invalid="ignore"):
            x = eval_map(m, x)
        ok = np.all(np.isfinite(x), axis=1) & (np.max(np.abs(x), axis=1) <= bound)
        pts.append(x[ok])
        x = np.where(ok[:, None], x, starts)
    return np.concatenate(pts)


def _operator_columns(m: AnalyticMap, monomials, samples):
    cols = [samples[:, j] for j in range(m.dim)]
    out = np.empty((samples.shape[0], len(monomials)))
    for c, e in enumerate(monomials):
        mono = Polynomial(m.dim, {e: 1})
        diff = mono.compose(list(m.components)) - mono
        out[:, c] = np.broadcast_to(diff.evaluate(cols), samples.shape[:1]) if not diff.is_zero() else 0.0
    return out


def invariance_kernel(m: AnalyticMap, degree: int, sample_spec: Optional[SampleSpec] = None
                      ) -> KernelReport:
    """Numerical kernel of ``Q -> Q o f - Q`` on polynomials of degree ``<= degree``."""
    if degree < 0:
        raise InputError("degree must be >= 0")
    spec = sample_spec or SampleSpec()
    monomials = monomials_up_to(m.dim, degree)
    nmon = len(monomials)
    samples = draw_samples(m, spec)
    if samples.shape[0] < 3 * nmon:
        raise InputError(f"{samples.shape[0]} samples for {nmon} unknowns; need at least {3 * nmon}")
    A = _operator_columns(m, monomials, samples)
    # row weights leave the exact kernel unchanged and tame escaping samples
    fx = eval_map(m, samples)
    big = np.maximum(1.0, np.maximum(np.max(np.abs(samples), axis=1), np.max(np.abs(fx), axis=1)))
    A = A / big[:, None] ** degree
    norms = np.linalg.norm(A, axis=0)
    scale = np.where(norms > 0, norms, 1.0)
    As = A / scale
    _, sv, Vt = np.linalg.svd(As, full_matrices=True)
    sv_full = np.zeros(nmon)
    sv_full[: sv.size] = sv
    smax = sv_full.max() if sv_full.size else 0.0
    thresh = SVD_REL_THRESHOLD * smax if smax > 0 else 0.0
    rank = int(np.sum(sv_full > thresh)) if smax > 0 else 0
    indeterminate = False
    cut_ratio = None
    if 0 < rank < nmon:
        cut_ratio = float(sv_full[rank] / sv_full[rank - 1])
        lo, hi = INDETERMINATE_BAND
        indeterminate = lo <= cut_ratio <= hi
    kernel = Vt[rank:].T / scale[:, None]  # back to monomial coefficients
    basis, reduced = _canonical_basis(kernel, monomials)
    return KernelReport(degree, tuple(monomials), tuple(tuple(b) for b in basis),
                        tuple(tuple(r) for r in reduced), tuple(float(s) for s in sv_full),
                        int(samples.shape[0]), spec, indeterminate, cut_ratio)


def _canonical_basis(kernel: np.ndarray, monomials):
    nmon = len(monomials)
    k = kernel.shape[1]
    if k == 0:
        return [], []
    # reduced row echelon form, pivots chosen from the highest-degree monomials
    order = list(range(nmon))[::-1]
    R = kernel.T.copy()
    R = R / np.max(np.abs(R), axis=1, keepdims=True)
    pivots = []
    row = 0
    for col in order:
        if row >= k:
            break
        piv = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[piv, col]) < 1e-9:
            continue
        R[[row, piv]] = R[[piv, row]]
        R[row] /= R[row, col]
        for r in range(k):
            if r != row:
                R[r] -= R[r, col] * R[row]
        pivots.append(col)
        row += 1
    R[np.abs(R) < 1e-13] = 0.0
    R = R + 0.0
    # constants first, otherwise by pivot degree
    idx = sorted(range(len(pivots)), key=lambda i: (pivots[i] != 0, pivots[i]))
    reduced = [R[i] for i in idx]
    # orthonormal basis, constants first (Gram-Schmidt in the given order)
    basis = []
    for v in reduced:
        w = v.copy()
        for b in basis:
            w = w - np.dot(b, w) * b
        nw = np.linalg.norm(w)
        if nw > 1e-12:
            w = w / nw
            j = int(np.flatnonzero(np.abs(w) > 1e-12)[0])
            basis.append((w if w[j] > 0 else -w) + 0.0)
    return basis, reduced


@dataclass(frozen=True)
class IntegralCheck:
    passed: bool
    deviation: float
    tolerance: float
    sample_count: int

    def to_dict(self) -> dict:
        return {"passed": self.passed, "deviation": self.deviation, "tolerance": self.tolerance,
                "sample_count": self.sample_count}


def verify_integral(m: AnalyticMap, Q: Polynomial, tolerance: float = 1e-8, *,
                    box: Sequence[float] = (-1.0, 1.0), n_samples: int = 1000,
                    seed: int = 12345) -> IntegralCheck:
    """max ``|Q(f(x)) - Q(x)| / max(1, |Q(x)|)`` on a fresh seeded box sample."""
    if Q.nvars != m.dim:
        raise InputError("polynomial and map dimensions differ")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(box[0], box[1], size=(n_samples, m.dim))
    fx = eval_map(m, pts)
    q0 = np.broadcast_to(Q.evaluate([pts[:, j] for j in range(m.dim)]), (n_samples,))
    q1 = np.broadcast_to(Q.evaluate([fx[:, j] for j in range(m.dim)]), (n_samples,))
    dev = float(np.max(np.abs(q1 - q0) / np.maximum(1.0, np.abs(q0))))
    return IntegralCheck(dev <= tolerance, dev, tolerance, n_samples)


__all__ = [
    "IntegralCheck",
    "KernelReport",
    "SampleSpec",
    "coefficients_to_polynomial",
    "draw_samples",
    "invariance_kernel",
    "verify_integral",
]
