"""Linearizing coordinates on the whole saddle neighbourhood.

A local chart ``Phi_loc`` with all multipliers conjugates ``f`` to its
linear part on a small ball. It is extended along orbits by transport,

    Phi(z) = f^-k(Phi_loc(Lambda^k z)),

for any ``k`` with ``Lambda^k z`` inside the ball. With the eigenvector
normalization shared by all charts, ``Phi(x, 0)`` is the stable chart and
``Phi(0, y)`` the unstable chart, so homoclinic parameters are linearizing
coordinates directly.

``scale`` records a rescaling ``z = z_unit / scale`` of those coordinates
(by default the ball radius, so the rescaled ball has radius 1); stable and
unstable chart parameters divide by ``scale`` on the way in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import mpmath
import numpy as np

from .errors import DomainError, InputError, NotFoundError
from .manifold import ManifoldChart, compute_parameterization
from .mapcore import AnalyticMap, Saddle, eval_inverse, eval_map, is_mp

log = logging.getLogger(__name__)

MAX_TRANSPORT = 2000


@dataclass(frozen=True, eq=False)
class LinearizingChart:
    chart: ManifoldChart
    fmap: AnalyticMap
    saddle: Saddle
    precision: int
    scale: float = 1.0

    def from_chart_parameter(self, side: str, sigma):
        """Linearizing coordinates of the point with stable/unstable chart parameter ``sigma``."""
        s = np.atleast_1d(np.asarray(sigma, dtype=float)) / self.scale
        zero_m = np.zeros(self.n_minus)
        zero_p = np.zeros(self.n_plus)
        return np.concatenate([s, zero_p]) if side == "stable" else np.concatenate([zero_m, s])

    @property
    def radius(self) -> float:
        return self.chart.validity_radius

    @property
    def n_minus(self) -> int:
        return self.saddle.n_minus

    @property
    def n_plus(self) -> int:
        return self.saddle.n_plus

    @property
    def multipliers(self) -> tuple:
        return self.chart.multipliers

    def _lin(self, z, k):
        return [l**k * v for l, v in zip(self.chart.multipliers, z)]

    def transport_range(self, z) -> tuple:
        """Smallest and largest ``k`` with ``|Lambda^k z| <= radius`` (``None`` if none).

        ``log|Lambda^k z|^2`` is convex in ``k``, so the valid indices are an interval.
        """
        with mpmath.workdps(self.precision):
            logs = [mpmath.log(abs(mpmath.mpf(l))) for l in self.chart.multipliers]
            zz = [mpmath.mpf(v) for v in z]
            r2 = mpmath.mpf(self.radius) ** 2

            def norm2(k):
                return mpmath.fsum(v * v * mpmath.exp(2 * k * g) for v, g in zip(zz, logs) if v != 0)

            if norm2(0) <= r2:
                k0 = 0
            else:
                # walk downhill from 0 to the minimum of the convex profile
                k0 = 0
                step = -1 if norm2(-1) < norm2(0) else 1
                while norm2(k0) > r2:
                    if norm2(k0 + step) >= norm2(k0) or abs(k0) > MAX_TRANSPORT:
                        return None
                    k0 += step
            lo = k0
            while norm2(lo - 1) <= r2 and lo > -MAX_TRANSPORT:
                lo -= 1
            hi = k0
            while norm2(hi + 1) <= r2 and hi < MAX_TRANSPORT:
                hi += 1
            if hi >= MAX_TRANSPORT and all(v == 0 for v in zz):
                hi = 0
            return lo, hi

    def to_ambient(self, z, k: Optional[int] = None, policy: str = "first"):
        """``Phi(z)`` in mpf, with the transport index chosen by ``policy`` (``first``/``last``)."""
        with mpmath.workdps(self.precision):
            z = [mpmath.mpf(v) for v in z]
            if k is None:
                rng = self.transport_range(z)
                if rng is None:
                    raise DomainError("orbit of the point never enters the linearizing ball")
                k = rng[0] if policy == "first" else rng[1]
            x = self.chart.evaluate(self._lin(z, k))
            for _ in range(abs(k)):
                x = eval_inverse(self.fmap, x) if k > 0 else eval_map(self.fmap, x)
            return x, k

    def local_inverse(self, q, tol: Optional[float] = None, max_iter: int = 60):
        """Solve ``Phi_loc(w) = q`` by Newton; ``q`` float array ``(npts, n)`` or an mpf point."""
        if isinstance(q, (list, tuple)) and q and isinstance(q[0], mpmath.mpf):
            return self._local_inverse_mp(list(q), max_iter)
        Q = np.atleast_2d(np.asarray(q, dtype=float))
        E = self.chart.vectors
        p = np.asarray([float(v) for v in self.chart.point])
        W = np.linalg.solve(E, (Q - p).T).T
        tol = 1e-15 if tol is None else tol
        for _ in range(max_iter):
            R = self.chart.evaluate(W) - Q
            err = np.linalg.norm(R, axis=1)
            if np.all(err <= tol * (1 + np.linalg.norm(Q, axis=1))):
                break
            J = self.chart.derivative(W)
            W = W - np.linalg.solve(J, R[..., None])[..., 0]
        else:
            if np.max(err) > 1e-12:
                raise NotFoundError(f"local inverse Newton did not converge (residual {np.max(err):.3e})")
        if np.any(np.linalg.norm(W, axis=1) > self.radius * (1 + 1e-9)):
            raise DomainError("point lies outside the linearizing ball")
        return W

    def _local_inverse_mp(self, q, max_iter):
        with mpmath.workdps(self.precision):
            w0 = self.local_inverse(np.array([[float(v) for v in q]]))[0]
            w = [mpmath.mpf(v) for v in w0]
            tol = mpmath.mpf(10) ** (-(self.precision - 5))
            for _ in range(max_iter):
                r = [a - b for a, b in zip(self.chart.evaluate(w), q)]
                if mpmath.sqrt(mpmath.fsum(v * v for v in r)) <= tol:
                    return w
                step = mpmath.lu_solve(self.chart.derivative(w), mpmath.matrix(r))
                w = [a - b for a, b in zip(w, step)]
            raise NotFoundError("high precision local inverse did not converge")

    def to_linear(self, q, k: int = 0):
        """Linearizing coordinates of ambient ``q``: ``Lambda^-k Phi_loc^-1(f^k(q))``."""
        mp_mode = is_mp(list(q)) if not isinstance(q, np.ndarray) else False
        x = list(q) if mp_mode else np.asarray(q, dtype=float)
        for _ in range(abs(k)):
            x = eval_map(self.fmap, x) if k > 0 else eval_inverse(self.fmap, x)
        lam = self.chart.multipliers
        if mp_mode:
            w = self.local_inverse(x)
            return [mpmath.mpf(l) ** (-k) * v for l, v in zip(lam, w)]
        w = self.local_inverse(x)
        return w * np.asarray([float(l) for l in lam]) ** (-k)


def build_linearizing_chart(fmap: AnalyticMap, saddle: Saddle, *, order: int = 20,
                            precision: int = 60, residual_tol: Optional[float] = None,
                            max_radius: float = 0.5, normalize: bool = True) -> LinearizingChart:
    """Local linearizing chart at high precision.

    ``residual_tol`` defaults to ``10**-(precision // 2)``; the validity radius
    is the largest dyadic radius meeting it. With ``normalize`` the
    coordinates are rescaled (exactly, by that power of two) to a unit ball.
    """
    if saddle.complex_pairs:
        raise InputError("linearizing charts need real multipliers")
    tol = residual_tol if residual_tol is not None else 10.0 ** (-(precision // 2))
    chart = compute_parameterization(fmap, saddle, "full", order, precision=precision,
                                     residual_tol=tol, max_radius=max_radius)
    log.info("linearizing chart: order %d radius %.3g residual %.3e", order,
             chart.validity_radius, chart.residual)
    if normalize:
        scale = chart.validity_radius
        return LinearizingChart(chart.rescaled(scale), fmap, saddle, precision, scale)
    return LinearizingChart(chart, fmap, saddle, precision)


__all__ = ["LinearizingChart", "build_linearizing_chart"]
