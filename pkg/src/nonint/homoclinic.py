"""Homoclinic intersections: search, refinement, classification.

Planar intersections of the sampled curves are found with shapely and then
refined by Newton's method on ``G_s(sigma) - G_u(tau) = 0`` using the
global charts. Classification works on the scalar crossing function
``g(t)``: the signed distance of the unstable curve from the stable one,
``t`` the unstable arc length from the intersection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from shapely.geometry import LineString, MultiLineString

from .errors import InputError
from .manifold import (
    ADMISSIBILITY_TOL,
    ManifoldSamples,
    admissibility_test,
    distance_to_polylines,
    global_chart_point,
)
from .mapcore import AnalyticMap, eval_inverse, eval_map

log = logging.getLogger(__name__)

TRANSVERSALITY_TOL = 1e-6
MIN_DISTANCE_TO_P = 1e-4
NEWTON_TOL = 1e-10
MAX_CONTACT_ORDER = 6


# --------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class Curve:
    """An ordered sample of a parameterized curve plus exact evaluation.

    ``func(param) -> (point, tangent)``; ``pieces`` are ``(params, points)``
    arrays of connected polylines.
    """

    pieces: tuple
    func: Callable
    name: str = "curve"
    entry: Optional[Callable] = None  # param -> (index, chart coordinates)

    def point(self, t: float):
        return self.func(t)[0]

    def tangent(self, t: float):
        return self.func(t)[1]


def curve_from_samples(samples: ManifoldSamples, fmap: AnalyticMap) -> Curve:
    """Adapter from globalized manifold samples to :class:`Curve`."""
    chart = samples.chart
    lam = float(chart.multipliers[0])
    rho = chart.validity_radius

    def func(t):
        x, D, _ = global_chart_point(chart, fmap, [t])
        return x, D[:, 0]

    def entry(t):
        # first orbit entry into the chart: stable params shrink under f, unstable under f^-1
        k, s = 0, t
        while abs(s) > rho:
            s *= lam if chart.side == "stable" else 1.0 / lam
            k += 1
        return k, (s,)

    return Curve(tuple(samples.polylines()), func, samples.side, entry)


def synthetic_curve(func: Callable, params: Sequence[float], name: str = "curve") -> Curve:
    """Curve from a callable ``t -> point``; tangents by central differences."""
    params = np.asarray(params, dtype=float)
    pts = np.array([func(t) for t in params], dtype=float)

    def f2(t, h=1e-6):
        return np.asarray(func(t), dtype=float), (np.asarray(func(t + h)) - np.asarray(func(t - h))) / (2 * h)

    return Curve(((params, pts),), f2, name)


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class HomoclinicDatum:
    point: tuple
    stable_param: float
    unstable_param: float
    residual: float
    kind: str = "unclassified"  # transverse | tangency | undetermined | unclassified
    angle: Optional[float] = None
    contact_order: Optional[int] = None
    one_sided: Optional[bool] = None
    first_entry_stable: Optional[tuple] = None
    first_entry_unstable: Optional[tuple] = None
    entry_index_stable: Optional[int] = None
    entry_index_unstable: Optional[int] = None
    admissible_minus: Optional[bool] = None
    admissible_plus: Optional[bool] = None
    isolated: bool = True

    @property
    def transverse(self) -> bool:
        return self.kind == "transverse"

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "stable_param": self.stable_param,
            "unstable_param": self.unstable_param,
            "residual": self.residual,
            "kind": self.kind,
            "angle": self.angle,
            "contact_order": self.contact_order,
            "one_sided": self.one_sided,
            "first_entry_stable": None if self.first_entry_stable is None
            else [float(v) for v in self.first_entry_stable],
            "first_entry_unstable": None if self.first_entry_unstable is None
            else [float(v) for v in self.first_entry_unstable],
            "entry_index_stable": self.entry_index_stable,
            "entry_index_unstable": self.entry_index_unstable,
            "admissible_minus": self.admissible_minus,
            "admissible_plus": self.admissible_plus,
            "isolated": self.isolated,
        }


@dataclass(frozen=True)
class HomoclinicSearch:
    data: tuple
    manifolds_coincide: bool = False
    dropped: int = 0
    candidates: int = 0
    notes: tuple = ()

    def __iter__(self):
        return iter(self.data)

    def __len__(self):
        return len(self.data)

    def __getitem__(self, i):
        return self.data[i]

    def to_dict(self) -> dict:
        return {
            "count": len(self.data),
            "manifolds_coincide": self.manifolds_coincide,
            "newton_dropped": self.dropped,
            "candidates": self.candidates,
            "notes": list(self.notes),
            "points": [d.to_dict() for d in self.data],
        }


# --------------------------------------------------------------------------
# search


def _param_at(params, pts, q):
    """Parameter of the projection of ``q`` onto the polyline ``pts``."""
    seg = np.diff(pts, axis=0)
    L = np.einsum("ij,ij->i", seg, seg)
    t = np.where(L > 0, np.einsum("ij,ij->i", q - pts[:-1], seg) / np.where(L > 0, L, 1), 0)
    t = np.clip(t, 0, 1)
    d = np.linalg.norm(pts[:-1] + t[:, None] * seg - q, axis=1)
    j = int(np.argmin(d))
    return float(params[j] + t[j] * (params[j + 1] - params[j]))


def _planar_candidates(stable: Curve, unstable: Curve):
    s_lines = [(p, x) for p, x in stable.pieces if len(x) > 1]
    u_lines = [(p, x) for p, x in unstable.pieces if len(x) > 1]
    if not s_lines or not u_lines:
        return [], False
    s_geom = [LineString(x) for _, x in s_lines]
    u_geom = [LineString(x) for _, x in u_lines]
    s_multi = MultiLineString(s_geom)
    out = []
    overlap = False
    for ui, ug in enumerate(u_geom):
        if not ug.intersects(s_multi):
            continue
        for si, sg in enumerate(s_geom):
            if not ug.intersects(sg):
                continue
            inter = ug.intersection(sg)
            for g in getattr(inter, "geoms", [inter]):
                if g.is_empty:
                    continue
                if g.geom_type != "Point":
                    overlap = True
                    coords = np.asarray(g.coords)
                    g_pts = [coords[len(coords) // 2]]
                else:
                    g_pts = [np.array([g.x, g.y])]
                for q in g_pts:
                    sp, sx = s_lines[si]
                    up, ux = u_lines[ui]
                    out.append((q, _param_at(sp, sx, q), _param_at(up, ux, q)))
    return out, overlap


def _newton_pair(stable: Curve, unstable: Curve, s0: float, t0: float, tol: float = NEWTON_TOL,
                 max_iter: int = 30):
    s, t = s0, t0
    for _ in range(max_iter):
        xs, ds = stable.func(s)
        xu, du = unstable.func(t)
        r = xs - xu
        if not np.all(np.isfinite(r)):
            return None
        if np.linalg.norm(r) <= tol:
            return s, t, xs, float(np.linalg.norm(r))
        J = np.column_stack([ds, -du])
        try:
            ds_, dt_ = np.linalg.lstsq(J, r, rcond=None)[0]
        except np.linalg.LinAlgError:
            return None
        s, t = s - ds_, t - dt_
    xs, _ = stable.func(s)
    xu, _ = unstable.func(t)
    res = float(np.linalg.norm(xs - xu))
    return (s, t, xs, res) if res <= tol else None


def _orbit_images(fmap, x, span, bbox=None):
    out = []
    fwd, bwd = np.array(x, dtype=float), np.array(x, dtype=float)
    for _ in range(span):
        if np.linalg.norm(fwd) < 1e6:
            fwd = eval_map(fmap, fwd)
            out.append(fwd.copy())
        if fmap.has_inverse and np.linalg.norm(bwd) < 1e6:
            bwd = eval_inverse(fmap, bwd)
            out.append(bwd.copy())
    return [o for o in out if np.all(np.isfinite(o)) and np.linalg.norm(o) < 1e6]


def manifolds_coincide(stable: Curve, unstable: Curve, tol: float = 1e-8, n_check: int = 500) -> bool:
    """All sampled unstable points within ``tol`` of the stable samples (and conversely)."""
    s_lines = [x for _, x in stable.pieces]
    u_lines = [x for _, x in unstable.pieces]
    if not s_lines or not u_lines:
        return False
    for a, b in ((u_lines, s_lines), (s_lines, u_lines)):
        pts = np.concatenate(a)
        pts = pts[np.linspace(0, len(pts) - 1, min(n_check, len(pts))).astype(int)]
        if np.any(distance_to_polylines(pts, b) > tol):
            return False
    return True


def find_homoclinic_points(stable, unstable, *, fmap: Optional[AnalyticMap] = None,
                           fixed_point=None, dedup_radius: float = 1e-6,
                           min_distance: float = MIN_DISTANCE_TO_P,
                           admissibility_tol: float = ADMISSIBILITY_TOL,
                           orbit_span: int = 40) -> HomoclinicSearch:
    """Intersections of the stable and unstable samples, refined and deduplicated by orbit.

    ``stable`` and ``unstable`` are :class:`Curve` objects or
    :class:`ManifoldSamples` (then ``fmap`` is required). Planar curves are
    intersected segment-wise; for a curve against an ``(n-1)``-dimensional
    surface a proximity search seeds Newton's method.
    """
    if isinstance(stable, ManifoldSamples) and isinstance(unstable, ManifoldSamples):
        if fmap is None:
            raise InputError("fmap is required with manifold samples")
        if fixed_point is None:
            fixed_point = stable.chart.point
        if not stable.is_curve or not unstable.is_curve:
            return _codim_one_search(stable, unstable, fmap, fixed_point, min_distance,
                                     dedup_radius, admissibility_tol)
        stable = curve_from_samples(stable, fmap)
        unstable = curve_from_samples(unstable, fmap)
    dims = {x.shape[1] for _, x in stable.pieces + unstable.pieces if len(x)}
    if dims and dims != {2}:
        raise InputError("curve-curve intersection is implemented for planar maps only")
    p = None if fixed_point is None else np.asarray([float(v) for v in fixed_point])
    if manifolds_coincide(stable, unstable):
        return HomoclinicSearch((), True, 0, 0, ("manifolds coincide",))
    cands, overlap = _planar_candidates(stable, unstable)
    notes = ["segment overlap detected"] if overlap else []
    refined, dropped = [], 0
    for q, s0, t0 in cands:
        if p is not None and np.linalg.norm(q - p) <= min_distance:
            continue
        sol = _newton_pair(stable, unstable, s0, t0)
        if sol is None:
            dropped += 1
            continue
        s, t, x, res = sol
        if p is not None and np.linalg.norm(x - p) <= min_distance:
            continue
        if p is None and (abs(s) <= 1e-12 and abs(t) <= 1e-12):
            continue
        refined.append((s, t, x, res))
    if dropped:
        log.warning("%d intersection candidates dropped (Newton divergence)", dropped)
    # one datum per orbit: keep the best-centred representative
    refined.sort(key=lambda r: (abs(r[0]) + abs(r[1]), r[0], r[1]))
    kept = []
    for s, t, x, res in refined:
        images = [x] + (_orbit_images(fmap, x, orbit_span) if fmap is not None else [])
        dup = False
        for other in kept:
            ox = np.asarray(other.point)
            if any(np.linalg.norm(ox - im) <= dedup_radius for im in images):
                dup = True
                break
        if dup:
            continue
        kept.append(_make_datum(stable, unstable, s, t, x, res, admissibility_tol))
    # isolation: no other distinct intersection within 10 dedup radii
    pts = np.array([d.point for d in kept]) if kept else np.zeros((0, 2))
    out = []
    for i, d in enumerate(kept):
        near = np.linalg.norm(pts - pts[i], axis=1) if len(pts) else np.zeros(0)
        iso = bool(np.sum(near <= 10 * dedup_radius) <= 1) and not overlap
        out.append(replace(d, isolated=iso))
    return HomoclinicSearch(tuple(out), False, dropped, len(cands), tuple(notes))


def _make_datum(stable: Curve, unstable: Curve, s, t, x, res, admissibility_tol):
    kw = {}
    if stable.entry is not None:
        k, hs = stable.entry(s)
        kw.update(first_entry_stable=tuple(hs), entry_index_stable=k,
                  admissible_minus=admissibility_test(hs, admissibility_tol).admissible)
    if unstable.entry is not None:
        k, hu = unstable.entry(t)
        kw.update(first_entry_unstable=tuple(hu), entry_index_unstable=k,
                  admissible_plus=admissibility_test(hu, admissibility_tol).admissible)
    return HomoclinicDatum(tuple(float(v) for v in x), float(s), float(t), float(res), **kw)


def _codim_one_search(stable: ManifoldSamples, unstable: ManifoldSamples, fmap, fixed_point,
                      min_distance, dedup_radius, admissibility_tol):
    """Unstable curve against an (n-1)-dimensional stable surface (or the mirror case)."""
    n = stable.points.shape[1]
    if stable.chart.m + unstable.chart.m != n or 1 not in (stable.chart.m, unstable.chart.m):
        raise InputError("intersection search needs manifold dimensions (n-1, 1)")
    surf, curve = (stable, unstable) if stable.chart.m == n - 1 else (unstable, stable)
    p = np.asarray([float(v) for v in fixed_point])
    tree = cKDTree(surf.points)
    d, idx = tree.query(curve.points)
    spacing = np.median(tree.query(surf.points, k=2)[0][:, 1])
    cand = [i for i in range(1, len(d) - 1)
            if d[i] <= d[i - 1] and d[i] <= d[i + 1] and d[i] <= 2 * spacing
            and curve.piece[i - 1] == curve.piece[i] == curve.piece[i + 1]]
    found, dropped = [], 0
    for i in cand:
        u = np.concatenate([np.atleast_1d(surf.params[idx[i]]), [curve.params[i]]])
        ok = False
        for _ in range(30):
            xs, Ds, _ = global_chart_point(surf.chart, fmap, u[:-1])
            xc, Dc, _ = global_chart_point(curve.chart, fmap, u[-1:])
            r = xs - xc
            if np.linalg.norm(r) <= NEWTON_TOL:
                ok = True
                break
            J = np.column_stack([Ds, -Dc])
            u = u - np.linalg.lstsq(J, r, rcond=None)[0]
            if not np.all(np.isfinite(u)):
                break
        if not ok:
            dropped += 1
            continue
        if np.linalg.norm(xs - p) <= min_distance:
            continue
        if any(np.linalg.norm(xs - np.asarray(f.point)) <= dedup_radius for f in found):
            continue
        s_par = u[:-1] if surf is stable else u[-1:]
        t_par = u[-1:] if surf is stable else u[:-1]
        found.append(HomoclinicDatum(tuple(float(v) for v in xs), float(s_par[0]), float(t_par[0]),
                                     float(np.linalg.norm(r)),
                                     admissible_minus=admissibility_test(s_par, admissibility_tol).admissible,
                                     admissible_plus=admissibility_test(t_par, admissibility_tol).admissible,
                                     first_entry_stable=tuple(float(v) for v in s_par),
                                     first_entry_unstable=tuple(float(v) for v in t_par)))
    return HomoclinicSearch(tuple(found), False, dropped, len(cand), ())


# --------------------------------------------------------------------------
# crossing functions


@dataclass(frozen=True)
class CrossingClass:
    kind: str
    angle: Optional[float]
    contact_order: Optional[int]
    one_sided: Optional[bool]
    derivatives: tuple = ()


def classify_crossing(g: Callable, t0: float = 0.0, step: float = 1e-3, *,
                      tangential_speed: float = 1.0,
                      transversality_tol: float = TRANSVERSALITY_TOL,
                      max_order: int = MAX_CONTACT_ORDER, rel_tol: float = 1e-8) -> CrossingClass:
    """Classify the zero of a crossing function ``g`` at ``t0``.

    Derivatives come from a least-squares polynomial over the window
    ``t0 +- 10 step``. Transverse iff the crossing angle
    ``atan2(|g'|, tangential_speed)`` exceeds ``transversality_tol``;
    otherwise the contact order is the first derivative of order 2..max_order
    whose window contribution exceeds ``rel_tol`` of the largest one.
    One-sidedness is the absence of a sign change across the window.
    """
    W = 10 * step
    ts = t0 + np.linspace(-W, W, 81)
    vals = np.array([float(g(t)) for t in ts])
    deg = max_order + 2
    u = (ts - t0) / W
    V = np.polynomial.chebyshev.chebvander(u, deg)
    cheb, *_ = np.linalg.lstsq(V, vals, rcond=None)
    mono = np.polynomial.chebyshev.cheb2poly(cheb)  # coefficients in u
    derivs = tuple(float(mono[k] * math.factorial(k) / W**k) for k in range(len(mono)))
    slope = derivs[1] if len(derivs) > 1 else 0.0
    angle = math.atan2(abs(slope), abs(tangential_speed))
    scale = float(np.max(np.abs(mono[1:]))) if len(mono) > 1 else 0.0
    sign_change = _sign_change(vals, scale)
    if angle > transversality_tol:
        return CrossingClass("transverse", angle, 1, False, derivs)
    order = None
    for k in range(2, len(mono)):
        if abs(mono[k]) > rel_tol * scale and scale > 0:
            order = k
            break
    if order is None or order > max_order:
        return CrossingClass("undetermined", angle, None, None, derivs)
    return CrossingClass("tangency", angle, order, not sign_change, derivs)


def _sign_change(vals, scale):
    thresh = 1e-12 * max(scale, 1e-300)
    sig = vals[np.abs(vals) > thresh]
    return bool(sig.size and np.any(sig > 0) and np.any(sig < 0))


def crossing_function(stable: Curve, unstable: Curve, datum: HomoclinicDatum):
    """``g(t)``: signed normal distance from the stable curve of the unstable point at arc length ``t``.

    Returns ``(g, speed)`` with ``speed`` the tangential component used to
    normalize the angle (1 for an arc-length parameter).
    """
    tau0 = datum.unstable_param
    _, du = unstable.func(tau0)
    speed = float(np.linalg.norm(du))
    if speed == 0:
        raise InputError("degenerate unstable tangent")
    state = {"s": datum.stable_param}

    def g(t):
        q, _ = unstable.func(tau0 + t / speed)
        s = state["s"]
        for _ in range(30):
            xs, ds = stable.func(s)
            step = float(np.dot(xs - q, ds) / np.dot(ds, ds))
            s -= step
            if abs(step) <= 1e-15 * max(1.0, abs(s)):
                break
        xs, ds = stable.func(s)
        nvec = np.array([-ds[1], ds[0]]) / np.linalg.norm(ds)
        return float(np.dot(q - xs, nvec))

    return g, 1.0


def classify_intersection(datum: HomoclinicDatum, stable: Curve, unstable: Curve, *,
                          step: float = 1e-3, transversality_tol: float = TRANSVERSALITY_TOL
                          ) -> HomoclinicDatum:
    """Datum with ``kind``, ``angle``, ``contact_order`` and ``one_sided`` filled in."""
    g, speed = crossing_function(stable, unstable, datum)
    # the window is kept well inside the resolution of the samples
    cls = classify_crossing(g, 0.0, step, tangential_speed=speed,
                            transversality_tol=transversality_tol)
    if cls.kind == "transverse":
        # exact angle between the tangents
        _, ds = stable.func(datum.stable_param)
        _, du = unstable.func(datum.unstable_param)
        c = abs(np.dot(ds, du)) / (np.linalg.norm(ds) * np.linalg.norm(du))
        angle = math.acos(min(1.0, c))
        return replace(datum, kind="transverse", angle=angle, contact_order=1, one_sided=False)
    return replace(datum, kind=cls.kind, angle=cls.angle, contact_order=cls.contact_order,
                   one_sided=cls.one_sided)


def find_transverse_nearby(g: Callable, t0: float, search_radius: float, *,
                           exclude_radius: Optional[float] = None, n_scan: int = 4001,
                           xtol: float = 1e-10,
                           transversality_tol: float = TRANSVERSALITY_TOL) -> list:
    """Transverse zeros of ``g`` within ``search_radius`` of ``t0`` (other than ``t0`` itself).

    Sign changes on a uniform scan are refined by Brent's method; roots
    closer than ``exclude_radius`` (default ``search_radius * 1e-3``) to
    ``t0`` are the tangency itself and are skipped. Returns the roots sorted
    by distance from ``t0``; an empty list means not found.
    """
    if exclude_radius is None:
        exclude_radius = search_radius * 1e-3
    ts = t0 + np.linspace(-search_radius, search_radius, n_scan)
    vals = np.array([float(g(t)) for t in ts])
    roots = []
    for i in range(n_scan - 1):
        a, b, fa, fb = ts[i], ts[i + 1], vals[i], vals[i + 1]
        if fa == 0:
            r = a
        elif fa * fb < 0:
            r = brentq(g, a, b, xtol=xtol)
        else:
            continue
        if abs(r - t0) <= exclude_radius:
            continue
        h = max(1e-7, 1e-4 * search_radius)
        slope = (g(r + h) - g(r - h)) / (2 * h)
        if math.atan(abs(slope)) <= transversality_tol:
            continue
        if not roots or abs(r - roots[-1]) > 2 * xtol:
            roots.append(float(r))
    return sorted(roots, key=lambda r: (abs(r - t0), r))


def transverse_datum_nearby(datum: HomoclinicDatum, stable: Curve, unstable: Curve,
                            search_radius: float, admissibility_tol: float = ADMISSIBILITY_TOL):
    """Numerical counterpart of the tangency-to-crossing theorem on real curves.

    Returns a refined transverse :class:`HomoclinicDatum` or ``None``.
    """
    g, _ = crossing_function(stable, unstable, datum)
    roots = find_transverse_nearby(g, 0.0, search_radius)
    _, du = unstable.func(datum.unstable_param)
    speed = float(np.linalg.norm(du))
    for r in roots:
        t = datum.unstable_param + r / speed
        sol = _newton_pair(stable, unstable, datum.stable_param, t)
        if sol is None:
            continue
        s, t, x, res = sol
        d = _make_datum(stable, unstable, s, t, x, res, admissibility_tol)
        d = classify_intersection(d, stable, unstable)
        if d.transverse:
            return d
    return None


# --------------------------------------------------------------------------
# entropy flag


@dataclass(frozen=True)
class EntropyCertificate:
    positive: bool
    witness: Optional[tuple] = None
    angle: Optional[float] = None
    provenance: str = ""

    def to_dict(self) -> dict:
        return {"positive_entropy": self.positive,
                "witness": None if self.witness is None else [float(v) for v in self.witness],
                "angle": self.angle, "provenance": self.provenance}


def entropy_positivity_certificate(data, transversality_tol: float = TRANSVERSALITY_TOL
                                   ) -> EntropyCertificate:
    """Positive topological entropy flag from a verified transverse homoclinic point."""
    for d in data:
        if d.kind == "transverse" and d.angle is not None and d.angle > transversality_tol:
            return EntropyCertificate(True, d.point, d.angle,
                                      "transverse homoclinic point (horseshoe)")
    return EntropyCertificate(False, None, None, "no transverse homoclinic point verified")


__all__ = [
    "CrossingClass",
    "Curve",
    "EntropyCertificate",
    "HomoclinicDatum",
    "HomoclinicSearch",
    "classify_crossing",
    "classify_intersection",
    "crossing_function",
    "curve_from_samples",
    "entropy_positivity_certificate",
    "find_homoclinic_points",
    "find_transverse_nearby",
    "manifolds_coincide",
    "synthetic_curve",
    "transverse_datum_nearby",
]
