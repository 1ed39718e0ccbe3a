"""End-to-end run: saddle, spectrum, manifolds, homoclinic orbit, peeling, oracle.

Hypotheses are checked in order; the first failure stops the hypothesis
chain and the certificate reports it. The oracle runs regardless, as an
independent cross-check.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import mpmath
import numpy as np
import yaml

from .config import RunConfig
from .errors import DomainError, InputError, InternalResonanceError, NotAGraphError
from .homoclinic import classify_intersection, curve_from_samples, find_homoclinic_points
from .linearize import LinearizingChart, build_linearizing_chart
from .manifold import (
    compute_parameterization,
    extract_graph_portion,
    global_chart_point,
    globalize_manifold,
)
from .mapcore import AnalyticMap, classify_saddle, eval_map, find_fixed_point, load_map
from .obstruction import (
    HypothesisItem,
    ObstructionCertificate,
    ObstructionSetup,
    build_normal_form_sequence,
    build_shadow_sequence,
    certify,
    check_normal_form,
    remainder_limit,
)
from .oracle import SampleSpec, invariance_kernel
from .spectrum import check_multiplicative_nonresonance, pick_nonresonant_delta, scale_covering_degree

log = logging.getLogger(__name__)

HYPOTHESES = ("hyperbolic_saddle", "linearization_or_normal_form", "homoclinic_orbit",
              "nonresonance_admissibility", "graph_portion")


@dataclass
class PipelineResult:
    config: RunConfig
    map: AnalyticMap
    map_sha256: str
    stages: dict = field(default_factory=dict)
    hypotheses: list = field(default_factory=list)
    certificate: Optional[ObstructionCertificate] = None
    saddle: object = None
    charts: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    search: object = None
    datum: object = None
    kernel: object = None
    lin_chart: Optional[LinearizingChart] = None
    graph: object = None

    @property
    def sample_count(self) -> int:
        return sum(s.count for s in self.samples.values())


def load_map_document(path):
    """Map plus the optional ``saddle_guess`` declared in the file."""
    p = Path(path)
    m = load_map(p)
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read map file {p}: {exc}") from exc
    guess = doc.get("saddle_guess") if isinstance(doc, dict) else None
    sha = hashlib.sha256(p.read_bytes()).hexdigest()
    return m, (None if guess is None else tuple(float(v) for v in guess)), sha


def _item(name, ok, **details):
    return HypothesisItem(name, "pass" if ok else "fail", details)


def _pending(res: PipelineResult):
    done = {h.name for h in res.hypotheses}
    return [HypothesisItem(n, "not_evaluated") for n in HYPOTHESES if n not in done]


def _failed(res: PipelineResult) -> bool:
    return any(h.status == "fail" for h in res.hypotheses)


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    cfg.validate()
    m, doc_guess, sha = load_map_document(cfg.map_path)
    res = PipelineResult(cfg, m, sha)
    stages = set(cfg.stages)
    guess = cfg.guess or doc_guess or (0.0,) * m.dim
    stage_fixed_point(res, guess)
    if "spectrum" in stages or "obstruct" in stages:
        stage_spectrum(res)
    if "obstruct" in stages and not _failed(res):
        stage_linearization(res)
    if ({"manifold", "homoclinic", "obstruct"} & stages) and not _failed(res):
        stage_manifold(res)
    if ({"homoclinic", "obstruct"} & stages) and not _failed(res):
        stage_homoclinic(res)
    if "obstruct" in stages and not _failed(res):
        stage_admissibility(res)
    if "obstruct" in stages and not _failed(res):
        stage_graph(res)
    if "oracle" in stages:
        stage_oracle(res)
    if "obstruct" in stages:
        stage_obstruct(res)
    return res


def stage_fixed_point(res: PipelineResult, guess):
    m = res.map
    p = find_fixed_point(m, np.asarray(guess, dtype=float))
    s = classify_saddle(m, p)
    res.saddle = s
    ok = s.n_minus > 0 and s.n_plus > 0 and not s.complex_pairs and not s.defective
    res.stages["fixed-point"] = {
        "guess": [float(v) for v in guess],
        "point": [float(v) for v in p],
        "stable_eigenvalues": [float(v) for v in s.stable_eigenvalues],
        "unstable_eigenvalues": [float(v) for v in s.unstable_eigenvalues],
        "n_minus": s.n_minus,
        "n_plus": s.n_plus,
        "complex_pairs": bool(s.complex_pairs),
        "defective": bool(s.defective),
    }
    res.hypotheses.append(_item("hyperbolic_saddle", ok, n_minus=s.n_minus, n_plus=s.n_plus,
                                real_multipliers=not s.complex_pairs))


def stage_spectrum(res: PipelineResult):
    cfg, s = res.config, res.saddle
    out = {}
    if s is None or not s.n_minus or not s.n_plus:
        res.stages["spectrum"] = {"skipped": "no saddle"}
        return
    lam_m = [abs(float(v)) for v in s.stable_eigenvalues]
    lam_p = [1.0 / abs(float(v)) for v in s.unstable_eigenvalues]
    for side, mods in (("stable", lam_m), ("unstable", lam_p)):
        verdict = check_multiplicative_nonresonance(mods, cfg.nu_bound, cfg.resonance_tol)
        entry = {"resonance": verdict.to_dict()}
        if verdict.nonresonant:
            entry["scale"] = scale_covering_degree(mods, cfg.degree).to_dict()
        out[side] = entry
    nf = check_normal_form(res.map, s)
    out["normal_form"] = nf.to_dict()
    res.stages["spectrum"] = out
    res.charts["normal_form"] = nf


def stage_linearization(res: PipelineResult):
    cfg, s = res.config, res.saddle
    nf = res.charts.get("normal_form") or check_normal_form(res.map, s)
    details = {"normal_form": nf.is_normal_form}
    if nf.is_normal_form:
        res.hypotheses.append(HypothesisItem("linearization_or_normal_form", "pass",
                                             dict(details, route="normal_form")))
        return
    try:
        lc = build_linearizing_chart(res.map, s, order=cfg.lin_order, precision=cfg.lin_precision,
                                     residual_tol=cfg.lin_tol)
    except InternalResonanceError as exc:
        details.update(route="none", error=str(exc))
        res.hypotheses.append(HypothesisItem("linearization_or_normal_form", "fail", details))
        return
    res.lin_chart = lc
    details.update(route="linearizing_chart", order=cfg.lin_order, precision=cfg.lin_precision,
                   radius_unit_vectors=lc.scale, residual=float(lc.chart.residual))
    res.hypotheses.append(HypothesisItem("linearization_or_normal_form", "pass", details))


def stage_manifold(res: PipelineResult):
    cfg, s, m = res.config, res.saddle, res.map
    lo = -cfg.bbox * np.ones(m.dim)
    hi = cfg.bbox * np.ones(m.dim)
    out = {}
    for side in ("stable", "unstable"):
        chart = compute_parameterization(m, s, side, cfg.order)
        res.charts[side] = chart
        samples = globalize_manifold(chart, m, cfg.iterations, bbox=(lo, hi))
        res.samples[side] = samples
        out[side] = {
            "order": chart.order,
            "validity_radius": chart.validity_radius,
            "residual": chart.residual,
            "sample_count": samples.count,
            "arc_length": samples.arc_length() if samples.is_curve else None,
            "max_spacing": samples.max_spacing() if samples.is_curve else None,
            "notes": list(samples.notes),
        }
    out["iterations"] = cfg.iterations
    out["bbox"] = [list(lo), list(hi)]
    out["sample_count"] = res.sample_count
    res.stages["manifold"] = out


def stage_homoclinic(res: PipelineResult):
    cfg, m = res.config, res.map
    gs, gu = res.samples["stable"], res.samples["unstable"]
    search = find_homoclinic_points(gs, gu, fmap=m, fixed_point=res.saddle.point,
                                    dedup_radius=cfg.dedup_radius,
                                    admissibility_tol=cfg.admissibility_tol)
    data = list(search.data)
    if gs.is_curve and gu.is_curve and data:
        S, U = curve_from_samples(gs, m), curve_from_samples(gu, m)
        data = [classify_intersection(d, S, U, transversality_tol=cfg.transversality_tol) for d in data]
    res.search = search
    res.stages["homoclinic"] = {
        "count": len(data),
        "candidates": search.candidates,
        "dropped": search.dropped,
        "manifolds_coincide": search.manifolds_coincide,
        "notes": list(search.notes),
        "data": [d.to_dict() for d in data],
    }
    res.stages["homoclinic"]["data_list"] = data  # stripped before serialization
    ok = bool(data) and not search.manifolds_coincide
    res.hypotheses.append(_item("homoclinic_orbit", ok, count=len(data),
                                manifolds_coincide=search.manifolds_coincide))


def stage_admissibility(res: PipelineResult):
    data = res.stages["homoclinic"]["data_list"]
    spec = res.stages.get("spectrum", {})
    stable_ok = spec.get("stable", {}).get("resonance", {}).get("nonresonant_up_to_bound", False)
    unstable_ok = spec.get("unstable", {}).get("resonance", {}).get("nonresonant_up_to_bound", False)
    usable = [d for d in data if d.admissible_minus]
    chosen = next((d for d in usable if d.kind == "transverse"), usable[0] if usable else None)
    plus_only = not usable and any(d.admissible_plus for d in data)
    res.datum = chosen
    details = {"stable_nonresonant": bool(stable_ok), "unstable_nonresonant": bool(unstable_ok),
               "admissible_stable_data": len(usable)}
    if plus_only:
        details["note"] = "only unstable-side admissible data; the engine peels on the stable side"
    if chosen is not None:
        details["chosen"] = {"point": list(chosen.point), "stable_param": chosen.stable_param,
                             "unstable_param": chosen.unstable_param, "kind": chosen.kind}
    res.hypotheses.append(_item("nonresonance_admissibility", bool(stable_ok) and chosen is not None,
                                **details))


def _entry_forward(lam, x, target):
    k = 0
    while max(abs(v) for v in x) > target:
        x = [v * l for v, l in zip(x, lam)]
        k += 1
        if k > 1000:
            raise DomainError("stable parameter never enters the chart ball")
    return k, x


def stage_graph(res: PipelineResult):
    cfg, m, s, d = res.config, res.map, res.saddle, res.datum
    lc = res.lin_chart
    cu = res.charts["unstable"]
    lam_s = [float(v) for v in s.stable_eigenvalues]
    if s.n_plus != 1:
        res.hypotheses.append(HypothesisItem("graph_portion", "fail",
                                             {"error": "graph extraction implemented for one unstable direction"}))
        return
    if lc is not None:
        unit = 1.0
        x0 = [d.stable_param / lc.scale]
        conv = lambda q: lc.to_linear(np.asarray(q, dtype=float))
        coords = "linearizing"
    else:
        unit = res.charts["stable"].validity_radius
        x0 = [d.stable_param]
        conv = None
        coords = "eigen"
    k, xm = _entry_forward(lam_s, x0, unit / 2)
    radius = unit / 4
    hm = np.asarray(d.point, dtype=float)
    for _ in range(k):
        hm = eval_map(m, hm)

    def sheet(taus):
        pts = np.array([global_chart_point(cu, m, t)[0] for t in taus])
        for _ in range(k):
            pts = eval_map(m, pts)
        return pts

    to_y = (lambda q: conv(q)[:, -1]) if conv is not None else (lambda q: s.to_eigen_coordinates(q)[:, -1])
    tau = d.unstable_param
    eps = 1e-7 * max(1.0, abs(tau))
    dydt = float((to_y(sheet([tau + eps])) - to_y(sheet([tau - eps])))[0] / (2 * eps))
    details = {"entry_index": k, "x_minus": [float(v) for v in xm], "radius": radius,
               "coordinates": coords}
    try:
        if dydt == 0 or not math.isfinite(dydt):
            raise NotAGraphError("unstable sheet is tangent to the stable direction at the entry point")
        taus = tau + np.linspace(-1.3, 1.3, 801) * radius / abs(dydt)
        gp = extract_graph_portion(sheet(taus), s, hm, radius, degree=cfg.graph_degree,
                                   converter=conv, coordinates=coords, base_chart=cu)
    except (NotAGraphError, DomainError) as exc:
        details["error"] = str(exc)
        res.hypotheses.append(HypothesisItem("graph_portion", "fail", details))
        return
    res.graph = gp
    details.update(fit_residual=gp.fit_residual, degree=gp.degree, anchor=list(gp.anchor))
    res.stages["graph_portion"] = gp.to_dict()
    res.hypotheses.append(HypothesisItem("graph_portion", "pass", details))


def stage_oracle(res: PipelineResult):
    cfg = res.config
    spec = SampleSpec(box=(-cfg.oracle_box, cfg.oracle_box), seed=cfg.seed_oracle)
    rep = invariance_kernel(res.map, cfg.effective_oracle_degree, spec)
    res.kernel = rep
    res.stages["oracle"] = rep.to_dict()


def stage_obstruct(res: PipelineResult):
    cfg, s = res.config, res.saddle
    hyps = list(res.hypotheses) + _pending(res)
    params = dict(res.map.params)
    if _failed(res):
        setup = ObstructionSetup(res.map.name, params, hyps, precision=cfg.precision)
        res.certificate = certify(setup, cfg.degree, delta=(), C=(), zero_tol=cfg.zero_tol,
                                  peel_tol=cfg.peel_tol, oracle_report=res.kernel,
                                  seed=cfg.seed_candidates)
        return
    delta = pick_nonresonant_delta(s.n_plus, cfg.seed_delta)
    C = [cfg.C] * s.n_plus
    nf = res.charts.get("normal_form")
    gp = res.graph
    x_limit = None
    if res.lin_chart is not None:
        lc = res.lin_chart
        lm, lp = lc.multipliers[: s.n_minus], lc.multipliers[s.n_minus:]

        def factory(Y, i_range):
            return build_shadow_sequence(gp, lm, lp, Y, i_range, precision=cfg.precision,
                                         lin_chart=lc)
        provenance = "linear"
    else:
        def factory(Y, i_range):
            return build_normal_form_sequence(nf, gp, Y, i_range, precision=cfg.precision)
        lm = tuple(mpmath.mpf(v) for v in nf.multipliers[: s.n_minus])
        lp = tuple(mpmath.mpf(v) for v in nf.multipliers[s.n_minus:])
        provenance = "normal_form"
        with mpmath.workdps(cfg.precision):
            rl = remainder_limit(nf, factory(C, cfg.i_range), admissibility_tol=cfg.admissibility_tol)
        res.stages["remainder_limit"] = rl.to_dict()
        ok = rl.converged and rl.admissible
        hyps.append(_item("remainder_condition", ok, **rl.to_dict()))
        x_limit = rl.x_limit
    n_values = None if cfg.n_range is None else list(range(cfg.n_range[0], cfg.n_range[1] + 1))
    setup = ObstructionSetup(res.map.name, params, hyps, factory, lm, lp, x_limit=x_limit,
                             precision=cfg.precision, provenance=provenance)
    res.certificate = certify(setup, cfg.degree, delta=delta, C=C, n_values=n_values,
                              i_range=cfg.i_range, candidates=cfg.candidates,
                              seed=cfg.seed_candidates, zero_tol=cfg.zero_tol,
                              peel_tol=cfg.peel_tol, oracle_report=res.kernel)


__all__ = ["HYPOTHESES", "PipelineResult", "load_map_document", "run_pipeline"]
