"""Multiplicative non-resonance and ordered monomial scales.

The peeling stages need the values ``|lambda^nu|``, ``nu`` in N^m, listed in
strictly decreasing order. Such an order exists exactly when the log-moduli
admit no integer relation, which can only be checked up to a bound.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import GenerationError, HyperbolicityError, InputError, ResonanceError

RESONANCE_TOL = 1e-10
TIE_TOL = 1e-12
DEFAULT_NU_BOUND = 20


@dataclass(frozen=True)
class ResonanceVerdict:
    nonresonant: bool
    bound: int
    witness: Optional[tuple] = None
    # smallest |sum nu_i log|lambda_i|| seen over the scanned box
    closest: float = math.inf
    closest_nu: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "nonresonant_up_to_bound": self.nonresonant,
            "bound": self.bound,
            "witness": list(self.witness) if self.witness is not None else None,
            "closest_log_relation": self.closest,
            "closest_nu": list(self.closest_nu) if self.closest_nu is not None else None,
        }


def _log_moduli(moduli) -> np.ndarray:
    mods = np.abs(np.asarray([float(abs(m)) for m in moduli], dtype=float))
    if mods.ndim != 1 or mods.size == 0:
        raise InputError("need at least one modulus")
    if np.any(mods <= 0):
        raise InputError("moduli must be positive")
    if np.any(np.abs(mods - 1) <= 1e-12):
        raise HyperbolicityError(f"modulus equal to 1 in {mods}")
    return np.log(mods)


def _canonical(nu: np.ndarray, logs: np.ndarray) -> tuple:
    # sign fixed so that the first nonzero entry contributes a negative log;
    # inverting all moduli therefore negates the witness
    k = int(np.flatnonzero(nu)[0])
    if nu[k] * logs[k] > 0:
        nu = -nu
    return tuple(int(v) for v in nu)


def check_multiplicative_nonresonance(moduli: Sequence[float], nu_bound: int = DEFAULT_NU_BOUND,
                                      resonance_tol: float = RESONANCE_TOL) -> ResonanceVerdict:
    """Scan all nonzero ``nu`` with ``|nu|_inf <= nu_bound`` for ``|lambda^nu| = 1``.

    Resonance is declared when ``|sum nu_i log|lambda_i|| <= resonance_tol``.
    The witness returned is the resonant ``nu`` of smallest l1 norm (then
    smallest l-inf norm, then lexicographically smallest absolute pattern).
    """
    if nu_bound < 1:
        raise InputError("nu_bound must be >= 1")
    logs = _log_moduli(moduli)
    m = logs.size
    best = None
    closest, closest_nu = math.inf, None
    axis = np.arange(-nu_bound, nu_bound + 1)
    # chunk over the first coordinate to bound memory for larger m
    rest = [axis] * (m - 1)
    grid_rest = (np.stack(np.meshgrid(*rest, indexing="ij"), axis=-1).reshape(-1, m - 1)
                 if m > 1 else np.zeros((1, 0), dtype=int))
    for first in axis:
        if first < 0:
            continue  # nu and -nu give the same relation
        nus = np.hstack([np.full((grid_rest.shape[0], 1), first), grid_rest])
        if first == 0:
            # keep one representative of each +/- pair
            keep = np.array([tuple(v) > (0,) * m for v in nus]) if m > 1 else np.zeros(1, bool)
            nus = nus[keep]
        if nus.size == 0:
            continue
        rel = np.abs(nus @ logs)
        j = int(np.argmin(rel))
        if rel[j] < closest:
            closest, closest_nu = float(rel[j]), _canonical(nus[j].copy(), logs)
        hits = nus[rel <= resonance_tol]
        for nu in hits:
            key = (int(np.abs(nu).sum()), int(np.abs(nu).max()), tuple(int(v) for v in np.abs(nu)))
            if best is None or key < best[0]:
                best = (key, _canonical(nu.copy(), logs))
    if best is not None:
        return ResonanceVerdict(False, nu_bound, best[1], closest, closest_nu)
    return ResonanceVerdict(True, nu_bound, None, closest, closest_nu)


@dataclass(frozen=True)
class OrderedExponentScale:
    """Exponent vectors ``nu`` sorted by strictly decreasing ``|lambda^nu|``."""

    moduli: tuple
    entries: tuple  # ((nu, value), ...)

    @property
    def count(self) -> int:
        return len(self.entries)

    @property
    def exponents(self) -> list:
        return [nu for nu, _ in self.entries]

    @property
    def values(self) -> list:
        return [v for _, v in self.entries]

    @property
    def min_gap(self) -> float:
        """Smallest ratio value[k+1] / value[k]."""
        vals = self.values
        if len(vals) < 2:
            return math.nan
        return min(b / a for a, b in zip(vals, vals[1:]))

    @property
    def max_ratio(self) -> float:
        """Largest ratio value[k+1] / value[k] (closest approach to a tie)."""
        vals = self.values
        if len(vals) < 2:
            return math.nan
        return max(b / a for a, b in zip(vals, vals[1:]))

    def restricted(self, max_degree: int) -> "OrderedExponentScale":
        """Entries with total degree <= ``max_degree``, order preserved."""
        return OrderedExponentScale(self.moduli, tuple(e for e in self.entries if sum(e[0]) <= max_degree))

    def to_dict(self) -> dict:
        return {
            "moduli": [float(m) for m in self.moduli],
            "count": self.count,
            "exponents": [list(nu) for nu in self.exponents],
            "values": [float(v) for v in self.values],
            "min_gap": self.min_gap,
            "max_ratio": self.max_ratio,
        }


def _value(moduli, nu) -> float:
    v = 1.0
    for m, k in zip(moduli, nu):
        v *= m**k
    return v


def enumerate_ordered_exponents(moduli: Sequence[float], count: int,
                                tie_tol: float = TIE_TOL) -> OrderedExponentScale:
    """First ``count`` exponent vectors in decreasing ``|lambda^nu|`` order.

    Best-first frontier expansion: a heap keyed by ``sum nu_i log(1/lambda_i)``
    from which the cheapest vector is popped and its ``m`` successors pushed.
    Two consecutive values whose logs differ by at most ``tie_tol`` make the
    order ill-defined and raise :class:`ResonanceError`.
    """
    mods = tuple(float(abs(m)) for m in moduli)
    if any(not (0 < m < 1) for m in mods):
        raise InputError(f"moduli must lie in (0, 1), got {mods}")
    if count < 1:
        raise InputError("count must be >= 1")
    costs = [-math.log(m) for m in mods]
    dim = len(mods)
    start = (0,) * dim
    heap = [(0.0, start)]
    seen = {start}
    out = []
    last_cost = None
    # pop one beyond count so a tie at the cut is also detected
    while heap and len(out) <= count:
        cost, nu = heapq.heappop(heap)
        if last_cost is not None and abs(cost - last_cost) <= tie_tol * max(1.0, cost):
            raise ResonanceError(f"tie in ordered exponents: {out[-1][0]} and {nu}", witness=nu)
        last_cost = cost
        out.append((nu, _value(mods, nu)))
        for i in range(dim):
            nxt = nu[:i] + (nu[i] + 1,) + nu[i + 1:]
            if nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (sum(c * k for c, k in zip(costs, nxt)), nxt))
    return OrderedExponentScale(mods, tuple(out[:count]))


def scale_covering_degree(moduli: Sequence[float], degree: int) -> OrderedExponentScale:
    """Shortest ordered prefix containing every ``nu`` with ``|nu| <= degree``, then restricted to them."""
    dim = len(moduli)
    needed = math.comb(dim + degree, degree)
    count = needed
    while True:
        scale = enumerate_ordered_exponents(moduli, count)
        low = scale.restricted(degree)
        if low.count == needed:
            return low
        count *= 2


def brute_force_ordered_exponents(moduli: Sequence[float], count: int, max_degree: int):
    """Sort every ``nu`` with total degree <= ``max_degree`` by decreasing value."""
    mods = [float(abs(m)) for m in moduli]
    items = []
    for nu in itertools.product(range(max_degree + 1), repeat=len(mods)):
        if sum(nu) <= max_degree:
            items.append((sum(k * -math.log(m) for m, k in zip(mods, nu)), nu))
    items.sort()
    return [(nu, _value(mods, nu)) for _, nu in items[:count]]


def pick_nonresonant_delta(n_plus: int, seed: int, bound: int = DEFAULT_NU_BOUND,
                           low: float = 0.2, high: float = 0.8, max_tries: int = 100) -> tuple:
    """Seeded ``delta`` in ``[low, high]^n_plus`` with no multiplicative relation up to ``bound``.

    On failure the seed is incremented; after ``max_tries`` failures a
    :class:`GenerationError` is raised.
    """
    if n_plus < 1:
        raise InputError("n_plus must be >= 1")
    for attempt in range(max_tries):
        rng = np.random.default_rng(seed + attempt)
        delta = tuple(float(v) for v in rng.uniform(low, high, size=n_plus))
        if is_admissible_delta(delta, bound):
            return delta
    raise GenerationError(f"no non-resonant delta after {max_tries} seeds starting at {seed}")


def is_admissible_delta(delta: Sequence[float], bound: int = DEFAULT_NU_BOUND) -> bool:
    if any(not (0 < d < 1) for d in delta):
        return False
    return check_multiplicative_nonresonance(delta, bound).nonresonant


__all__ = [
    "OrderedExponentScale",
    "ResonanceVerdict",
    "brute_force_ordered_exponents",
    "check_multiplicative_nonresonance",
    "enumerate_ordered_exponents",
    "is_admissible_delta",
    "pick_nonresonant_delta",
    "scale_covering_degree",
]
