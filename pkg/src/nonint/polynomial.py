"""Sparse multivariate polynomials.

A polynomial in ``nvars`` variables is a mapping from exponent tuples to
coefficients. Coefficients parsed from text are kept as exact
:class:`fractions.Fraction` values and converted on demand to ``float`` or
``mpmath.mpf`` at evaluation time, so one object serves both the double
precision and the high precision code paths.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import mpmath
import numpy as np

from .errors import InputError

Exponent = Tuple[int, ...]


def parse_coefficient(value) -> Fraction | float:
    """Parse a coefficient given as ``"p/q"``, a decimal string, an int or a float.

    Strings are converted exactly (``"1.4"`` becomes ``7/5``); floats are kept
    as floats.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InputError(f"invalid coefficient {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return value
    if isinstance(value, str):
        text = value.strip()
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"invalid coefficient {value!r}") from exc
    raise InputError(f"invalid coefficient {value!r}")


def monomials_up_to(nvars: int, degree: int) -> list[Exponent]:
    """All exponent vectors of total degree <= ``degree``, graded then reverse-lex."""
    out: list[Exponent] = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for e in range(remaining, -1, -1):
            rec(prefix + (e,), remaining - e, slots - 1)

    for d in range(degree + 1):
        if nvars == 0:
            if d == 0:
                out.append(())
            continue
        rec((), d, nvars)
    return out


def _to_mpf(c):
    if isinstance(c, Fraction):
        return mpmath.mpf(c.numerator) / c.denominator
    return mpmath.mpf(c)


def _to_float(c):
    if isinstance(c, Fraction):
        return c.numerator / c.denominator
    return float(c)


class Polynomial:
    """Immutable sparse polynomial ``sum c_e x^e``."""

    __slots__ = ("nvars", "_terms", "_cache")

    def __init__(self, nvars: int, terms: Mapping[Exponent, object] | Iterable = ()):
        if nvars < 0:
            raise InputError("nvars must be non-negative")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: Dict[Exponent, object] = {}
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise InputError(f"exponent {exps} has length {len(exps)}, expected {nvars}")
            if any(e < 0 for e in exps):
                raise InputError(f"negative exponent in {exps}")
            acc[exps] = acc.get(exps, 0) + coeff
        self.nvars = nvars
        self._terms = {e: c for e, c in acc.items() if c != 0}
        self._cache: dict = {}

    # construction helpers
    @classmethod
    def constant(cls, nvars: int, value) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int, coeff=1) -> "Polynomial":
        e = [0] * nvars
        e[index] = 1
        return cls(nvars, {tuple(e): coeff})

    @classmethod
    def from_rows(cls, nvars: int, rows: Iterable) -> "Polynomial":
        """Build from ``(exponents, coefficient)`` rows with textual coefficients."""
        return cls(nvars, [(tuple(e), parse_coefficient(c)) for e, c in rows])

    # accessors
    @property
    def terms(self) -> Dict[Exponent, object]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, exps: Sequence[int]):
        return self._terms.get(tuple(exps), 0)

    @property
    def degree(self) -> int:
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self._terms.items())))

    def __repr__(self):
        if not self._terms:
            return f"Polynomial({self.nvars}, 0)"
        parts = []
        for e, c in sorted(self._terms.items(), key=lambda t: (sum(t[0]), t[0])):
            mono = "*".join(f"x{i}^{k}" if k > 1 else f"x{i}" for i, k in enumerate(e) if k)
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, {' + '.join(parts)})"

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise InputError("polynomials in different numbers of variables")
            return other
        return Polynomial.constant(self.nvars, other)

    def __add__(self, other):
        other = self._coerce(other)
        acc = dict(self._terms)
        for e, c in other._terms.items():
            acc[e] = acc.get(e, 0) + c
        return Polynomial(self.nvars, acc)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.nvars, {e: c * other for e, c in self._terms.items()})
        other = self._coerce(other)
        acc: Dict[Exponent, object] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                acc[e] = acc.get(e, 0) + c1 * c2
        return Polynomial(self.nvars, acc)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise InputError("negative power")
        result = Polynomial.constant(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def derivative(self, index: int) -> "Polynomial":
        acc = {}
        for e, c in self._terms.items():
            k = e[index]
            if k:
                e2 = list(e)
                e2[index] = k - 1
                acc[tuple(e2)] = c * k
        return Polynomial(self.nvars, acc)

    def compose(self, substitutions: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute polynomial ``substitutions[i]`` for variable ``i``."""
        if len(substitutions) != self.nvars:
            raise InputError("need one substitution per variable")
        if not substitutions:
            return self
        m = substitutions[0].nvars
        powers: Dict[Tuple[int, int], Polynomial] = {}

        def power(i, k):
            key = (i, k)
            if key not in powers:
                powers[key] = Polynomial.constant(m, 1) if k == 0 else power(i, k - 1) * substitutions[i]
            return powers[key]

        result = Polynomial(m, {})
        for e, c in self._terms.items():
            term = Polynomial.constant(m, c)
            for i, k in enumerate(e):
                if k:
                    term = term * power(i, k)
            result = result + term
        return result

    def map_coefficients(self, fn) -> "Polynomial":
        return Polynomial(self.nvars, {e: fn(c) for e, c in self._terms.items()})

    # evaluation
    def _numeric(self, kind):
        if kind == "mp":
            key = ("mp", mpmath.mp.prec)
            conv = _to_mpf
        else:
            key = ("float",)
            conv = _to_float
        cached = self._cache.get(key)
        if cached is None:
            exps = list(self._terms)
            coeffs = [conv(self._terms[e]) for e in exps]
            cached = (exps, coeffs)
            self._cache[key] = cached
        return cached

    def __call__(self, point):
        return self.evaluate(point)

    def evaluate(self, point):
        """Evaluate at ``point``.

        ``point`` is a sequence of ``nvars`` scalars (``float`` or ``mpf``) or
        of numpy arrays of a common shape (vectorized float evaluation).
        """
        if len(point) != self.nvars:
            raise InputError(f"point has {len(point)} coordinates, expected {self.nvars}")
        if any(isinstance(v, mpmath.mpf) for v in point):
            exps, coeffs = self._numeric("mp")
            result = mpmath.mpf(0)
            for e, c in zip(exps, coeffs):
                term = c
                for v, k in zip(point, e):
                    if k:
                        term *= v**k
                result += term
            return result
        if any(isinstance(v, np.ndarray) for v in point):
            arrs = [np.asarray(v, dtype=float) for v in point]
            exps, coeffs = self._numeric("float")
            result = np.zeros(np.broadcast(*arrs).shape)
            pw: dict = {}
            for e, c in zip(exps, coeffs):
                term = c
                for i, k in enumerate(e):
                    if k:
                        if (i, k) not in pw:
                            pw[(i, k)] = arrs[i] ** k
                        term = term * pw[(i, k)]
                result = result + term
            return result
        exps, coeffs = self._numeric("float")
        vals = [float(v) for v in point]
        result = 0.0
        for e, c in zip(exps, coeffs):
            term = c
            for v, k in zip(vals, e):
                if k:
                    term *= v**k
            result += term
        return result

    # serialization
    def to_rows(self) -> list:
        """``(exponents, coefficient-string)`` rows in graded order."""
        rows = []
        for e in sorted(self._terms, key=lambda t: (sum(t), tuple(-k for k in t))):
            rows.append([list(e), format_coefficient(self._terms[e])])
        return rows


def format_coefficient(c) -> str:
    if isinstance(c, Fraction):
        return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
    if isinstance(c, mpmath.mpf):
        return mpmath.nstr(c, mpmath.mp.dps)
    return repr(float(c))
