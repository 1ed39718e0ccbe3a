"""Certificate JSON, manifold CSV and SVG figures."""

from __future__ import annotations

import datetime as _dt
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .manifold import csv_header

SCHEMA = 1
MAX_PLOT_POINTS = 20000


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    return str(obj)


def build_document(result, timestamp: Optional[str] = None) -> dict:
    """Everything written to the certificate file, as plain JSON types."""
    from .pipeline import HYPOTHESES

    cfg = result.config
    stages = {}
    for name, summary in result.stages.items():
        stages[name] = {k: v for k, v in summary.items() if k != "data_list"} \
            if isinstance(summary, dict) else summary
    cert = result.certificate.to_dict() if result.certificate is not None else None
    doc = {
        "schema": SCHEMA,
        "tool": {"name": "artifact", "version": __version__},
        "timestamp": timestamp if timestamp is not None
        else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat(),
        "map": {"name": result.map.name, "params": dict(result.map.params),
                "file": Path(cfg.map_path).name, "sha256": result.map_sha256},
        "config": cfg.to_dict(),
        "seeds": {"delta": cfg.seed_delta, "candidates": cfg.seed_candidates,
                  "oracle": cfg.seed_oracle},
        "precision_digits": cfg.precision,
        "tolerances": {"admissibility_tol": cfg.admissibility_tol,
                       "transversality_tol": cfg.transversality_tol,
                       "zero_tol": cfg.zero_tol, "peel_tol": cfg.peel_tol,
                       "resonance_tol": cfg.resonance_tol, "dedup_radius": cfg.dedup_radius},
        "stages": stages,
        "hypothesis_order": list(HYPOTHESES),
        "certificate": cert,
    }
    # absolute paths depend on the machine, keep only the file name
    doc["config"]["map_path"] = Path(cfg.map_path).name
    return _clean(doc)


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def strip_timestamp(doc: dict) -> dict:
    out = dict(doc)
    out.pop("timestamp", None)
    return out


def write_csv(result, path) -> int:
    """Both manifolds' samples, one row each; returns the number of data rows."""
    n = result.map.dim
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(csv_header(n)) + "\n")
        for side in ("stable", "unstable"):
            s = result.samples.get(side)
            if s is None:
                continue
            s.to_csv(fh, header=False)
            rows += s.count
    return rows


def _thin(x, limit):
    if len(x) <= limit:
        return x
    idx = np.unique(np.linspace(0, len(x) - 1, limit).round().astype(int))
    return x[idx]


def write_svg(result, path) -> Optional[Path]:
    """Stable and unstable curves with one marker per homoclinic datum (planar maps)."""
    if result.map.dim != 2 or not result.samples:
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.collections import LineCollection

    plt.rcParams["svg.hashsalt"] = "artifact"
    fig, ax = plt.subplots(figsize=(6, 6))
    colors = {"stable": "tab:blue", "unstable": "tab:red"}
    for side in ("stable", "unstable"):
        s = result.samples.get(side)
        if s is None:
            continue
        total = max(s.count, 1)
        lines = [_thin(x, max(2, int(MAX_PLOT_POINTS * len(x) / total))) for _, x in s.polylines()]
        lc = LineCollection(lines, colors=colors[side], linewidths=0.6, label=f"{side} manifold")
        lc.set_gid(f"{side}-manifold")
        ax.add_collection(lc)
    data = result.stages.get("homoclinic", {}).get("data", [])
    for k, d in enumerate(data):
        (mk,) = ax.plot([d["point"][0]], [d["point"][1]], "o", ms=4, color="black")
        mk.set_gid(f"homoclinic-{k}")
    p = result.stages.get("fixed-point", {}).get("point")
    if p is not None:
        (fp,) = ax.plot([p[0]], [p[1]], "+", ms=8, color="green")
        fp.set_gid("saddle")
    lo, hi = result.stages["manifold"]["bbox"]
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(result.map.name)
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def emit(result, out_dir=None, *, timestamp: Optional[str] = None) -> dict:
    """Write certificate JSON (and CSV/SVG when enabled); returns the written paths."""
    cfg = result.config
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if cfg.write_csv and result.samples:
        p = out / "manifolds.csv"
        write_csv(result, p)
        paths["csv"] = p
    if cfg.write_svg and result.samples:
        p = write_svg(result, out / "manifolds.svg")
        if p is not None:
            paths["svg"] = p
    doc = build_document(result, timestamp)
    p = out / "certificate.json"
    p.write_text(dumps(doc), encoding="utf-8")
    paths["json"] = p
    return paths


__all__ = ["SCHEMA", "build_document", "dumps", "emit", "strip_timestamp", "write_csv", "write_svg"]
