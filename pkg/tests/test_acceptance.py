"""Acceptance criteria, one test each; every test records a PASS/FAIL line for the summary."""

import contextlib
import json
import math
import time

import mpmath
import numpy as np

from conftest import ACCEPTANCE_LINES
from nonint.cli import main
from nonint.config import bundled_config, bundled_map, load_config
from nonint.homoclinic import classify_crossing, find_transverse_nearby
from nonint.manifold import compute_parameterization
from nonint.mapcore import classify_saddle, find_fixed_point, load_map
from nonint.obstruction import (build_normal_form_sequence, build_shadow_sequence, check_normal_form,
                                peel_candidate, random_polynomial, remainder_limit)
from nonint.oracle import invariance_kernel, verify_integral
from nonint.pipeline import run_pipeline
from nonint.polynomial import Polynomial
from nonint.spectrum import (brute_force_ordered_exponents, check_multiplicative_nonresonance,
                             enumerate_ordered_exponents, pick_nonresonant_delta,
                             scale_covering_degree)


class Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def check(self, ok, what):
        if not ok:
            raise AssertionError(what)


@contextlib.contextmanager
def criterion(number, title):
    c = Criterion(number, title)
    t0 = time.perf_counter()
    try:
        yield c
    except BaseException as exc:
        line = f"[{number}] FAIL {title}: {exc}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"[{number}] PASS {title} ({c.detail}; {time.perf_counter() - t0:.2f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


class LineGraph:
    """Lambda(y) = c0 + c1 y on |y| <= domain_radius."""

    def __init__(self, c0=1, c1=1, domain_radius=1.0):
        self.c0, self.c1, self.domain_radius = c0, c1, domain_radius

    def evaluate(self, y):
        return [mpmath.mpf(self.c0) + mpmath.mpf(self.c1) * y[0]]


def test_criterion_1_conjugacy_residual(h14):
    with criterion(1, "Henon 1.4 unstable chart, order 20, conjugacy residual") as c:
        t0 = time.perf_counter()
        s = classify_saddle(h14, find_fixed_point(h14, [0.6, 0.2]))
        chart = compute_parameterization(h14, s, "unstable", 20)
        r = chart.conjugacy_residual(h14, chart.validity_radius, 1000, seed=1)
        dt = time.perf_counter() - t0
        c.detail = f"residual {r:.2e} at radius {chart.validity_radius:g}, {dt:.2f} s"
        c.check(r <= 1e-10, f"residual {r:.3e} > 1e-10")
        c.check(dt < 5.0, f"runtime {dt:.2f} s >= 5 s")


def test_criterion_2_exact_chart(quad_unstable):
    with criterion(2, "exact chart (2t^2/7, t)") as c:
        s = classify_saddle(quad_unstable, [0, 0])
        C = compute_parameterization(quad_unstable, s, "unstable", 20).float_coeffs
        expect = np.zeros_like(C)
        expect[1, 1] = 1.0
        expect[0, 2] = 2 / 7
        # the tangent is only fixed up to sign
        if C[1, 1] < 0:
            expect[1, 1] = -1.0
        err = float(np.max(np.abs(C - expect)))
        c.detail = f"max coefficient error {err:.1e}"
        c.check(err <= 1e-14, f"coefficient error {err:.3e}")


def test_criterion_3_resonance():
    with criterion(3, "resonance detection and ordered enumeration") as c:
        v = check_multiplicative_nonresonance([0.5, 0.25], 5)
        c.check(not v.nonresonant and v.witness == (2, -1), f"witness {v.witness}")
        rng = np.random.default_rng(2024)
        draws = 0
        while draws < 100:
            mods = list(rng.uniform(0.1, 0.9, size=int(rng.integers(1, 4))))
            if not check_multiplicative_nonresonance(mods, 25).nonresonant:
                continue
            bf = [nu for nu, _ in brute_force_ordered_exponents(mods, 50, 25)]
            # enumerate far enough that 50 entries of degree <= 25 (or all of them) are listed
            count = 50
            while True:
                got = [nu for nu in enumerate_ordered_exponents(mods, count).exponents if sum(nu) <= 25]
                if len(got) >= len(bf):
                    break
                count *= 2
            c.check(got[:len(bf)] == bf, f"enumerator differs from brute force for {mods}")
            draws += 1
        c.detail = f"witness {v.witness}, {draws} draws agree"


def test_criterion_4_crossings():
    with criterion(4, "crossing classification") as c:
        k1 = classify_crossing(lambda t: t)
        k2 = classify_crossing(lambda t: t * t)
        k3 = classify_crossing(lambda t: t**3)
        c.check(k1.kind == "transverse", f"t classified {k1.kind}")
        c.check((k2.kind, k2.contact_order, k2.one_sided) == ("tangency", 2, True), f"t^2: {k2}")
        c.check((k3.kind, k3.contact_order, k3.one_sided) == ("tangency", 3, False), f"t^3: {k3}")
        roots = sorted(find_transverse_nearby(lambda t: t**3 - 1e-4 * t, 0.0, 0.05))
        c.check(len(roots) == 2, f"roots {roots}")
        err = max(abs(roots[0] + 0.01), abs(roots[1] - 0.01))
        c.detail = f"roots {roots[0]:.6f}, {roots[1]:.6f}"
        c.check(err <= 1e-6, f"root error {err:.2e}")


def test_criterion_5_peeling_round_trip():
    with criterion(5, "peeling round trip, 20 planted tables") as c:
        t0 = time.perf_counter()
        delta = pick_nonresonant_delta(1, 0)
        graph = LineGraph()
        worst = 0.0
        for seed in range(20):
            D = 1 + seed % 5
            sd = scale_covering_degree(delta, D)
            n_values = list(range(sd.count + 1))
            with mpmath.workdps(50):
                seqs = [build_shadow_sequence(graph, [0.5], [2],
                                              [mpmath.mpf("0.5") * mpmath.mpf(delta[0]) ** n],
                                              precision=50) for n in n_values]
            Q = random_polynomial(1, 1, D, seed=seed)
            run = peel_candidate(seqs, [s.values(Q) for s in seqs], n_values, delta, [0.5], D,
                                 scale_covering_degree([0.5], D))
            planted = {(e[:1], e[1:]): cf for e, cf in Q.items()}
            c.check(len(run.table.entries) == len(planted), f"seed {seed}: table size")
            for en in run.table.entries:
                ref = planted[(en.nu, en.w)]
                worst = max(worst, float(abs(en.value - ref) / abs(ref)))
        dt = time.perf_counter() - t0
        c.detail = f"max relative error {worst:.1e}, {dt:.1f} s"
        c.check(worst <= 1e-8, f"relative error {worst:.3e}")
        c.check(dt < 30.0, f"runtime {dt:.1f} s >= 30 s")


def test_criterion_6_henon_six(h6):
    with criterion(6, "Henon 6 engine and oracle agree") as c:
        t0 = time.perf_counter()
        res = run_pipeline(load_config(bundled_config("henon-horseshoe.cfg")))
        dt = time.perf_counter() - t0
        cert = res.certificate
        c.check(cert.verdict == "forced_trivial_to_degree_6", f"verdict {cert.verdict}")
        nonconst = max(ct["max_nonconstant"] for ct in cert.controls)
        c.check(nonconst <= 1e-6, f"non-constant coefficient {nonconst:.3e}")
        c.check(res.kernel.constants_only and res.kernel.degree == 6, "pipeline kernel")
        c.check(invariance_kernel(h6, 6).constants_only, "kernel not constants only")
        trip = max(r["max_relative_error"] for r in cert.round_trips)
        c.check(all(r["passed"] for r in cert.round_trips), f"round trip error {trip:.3e}")
        c.detail = (f"{cert.verdict}, max non-constant {nonconst:.1e}, round trip {trip:.1e}, "
                    f"pipeline {dt:.1f} s")
        c.check(dt < 60.0, f"runtime {dt:.1f} s >= 60 s")


def test_criterion_7_integrable_controls(L, sheared):
    with criterion(7, "integrable controls") as c:
        res = run_pipeline(load_config(bundled_config("linear-saddle.cfg")))
        cert = res.certificate
        c.check(cert.verdict == "hypotheses_not_met" and cert.failed == ("homoclinic_orbit",),
                f"verdict {cert.verdict} {cert.failed}")
        polys = invariance_kernel(L, 2).polynomials()
        c.check(len(polys) == 2 and set(polys[0].terms) == {(0, 0)}
                and set(e for e in polys[1].terms if sum(e)) == {(1, 1)}, "kernel is not {1, xy}")
        dev = verify_integral(L, Polynomial(2, {(1, 1): 1})).deviation
        c.check(dev == 0, f"xy deviation {dev}")
        planted = Polynomial(2, {(1, 1): 1, (0, 3): -1})
        vs = verify_integral(sheared, planted, 1e-8)
        c.detail = f"kernel {{1, xy}}, xy deviation {dev}, sheared deviation {vs.deviation:.1e}"
        c.check(vs.passed, f"sheared deviation {vs.deviation:.3e}")


def test_criterion_8_normal_form(cubic, quad_unstable):
    with criterion(8, "normal form and remainder limit") as c:
        nf = check_normal_form(cubic, classify_saddle(cubic, [0, 0]))
        c.check(nf.is_normal_form, "cubic rejected")
        bad = check_normal_form(quad_unstable, classify_saddle(quad_unstable, [0, 0]))
        c.check(not bad.is_normal_form and [v[1] for v in bad.violations] == [(0, 2)],
                f"violations {bad.violations}")
        seq = build_normal_form_sequence(nf, LineGraph(0.1, 0, 0.5), [0.3])
        rl = remainder_limit(nf, seq)
        tail = [v for _, v in rl.history[-6:]]
        diffs = [float(abs(b - a)) for a, b in zip(tail, tail[1:])]
        c.check(rl.converged and len(diffs) == 5 and max(diffs) < 1e-10, f"differences {diffs}")
        with mpmath.workdps(50):
            x = mpmath.mpf(0.1)
            for _ in range(200):
                x = x / 2 + x * x
            oracle = x * mpmath.mpf(2) ** 200 - mpmath.mpf(0.1)
        err = float(abs(rl.limit[0] - oracle))
        c.detail = f"y^2 named, l_plus {float(rl.limit[0]):.12f}, error {err:.1e}"
        c.check(err <= 1e-9, f"l_plus error {err:.3e}")


def test_criterion_9_determinism(tmp_path, capsys):
    with criterion(9, "determinism of repeated full runs") as c:
        out = tmp_path / "out"
        files = []
        for _ in range(2):
            rc = main(["full", "henon-horseshoe.cfg", "--out-dir", str(out)])
            capsys.readouterr()
            c.check(rc == 0, f"exit code {rc}")
            files.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        a, b = files
        c.check(a.keys() == b.keys(), "different file sets")
        docs = [json.loads(f["certificate.json"]) for f in files]
        c.check(docs[0].pop("timestamp") and docs[1].pop("timestamp"), "missing timestamp")
        c.check(docs[0] == docs[1], "certificates differ beyond the timestamp")
        # the timestamp is the only line allowed to differ
        la, lb = a["certificate.json"].splitlines(), b["certificate.json"].splitlines()
        diff = [x for x, y in zip(la, lb) if x != y]
        c.check(len(la) == len(lb) and all(x.strip().startswith(b'"timestamp"') for x in diff),
                "byte difference outside the timestamp")
        same = [n for n in a if n != "certificate.json" and a[n] == b[n]]
        c.check(len(same) == len(a) - 1, "CSV or SVG output differs")
        c.detail = f"{len(a)} files compared, {len(diff)} differing line(s)"


def test_acceptance_suite_uses_bundled_maps():
    # the configs above resolve to the shipped map files
    assert load_map(bundled_map("henon-6.yaml")).dim == 2
    assert math.isclose(float(load_map(bundled_map("henon-6.yaml")).params["a"]), 6.0)
