"""Run configuration: INI files, command-line overrides, validation."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import InputError

STAGES = ("fixed-point", "spectrum", "manifold", "homoclinic", "obstruct", "oracle")

# INI section of every field; fields not listed live in [run]
_SECTIONS = {
    "guess": "run", "map_path": "run", "stages": "run",
    "order": "manifold", "iterations": "manifold", "bbox": "manifold",
    "dedup_radius": "homoclinic", "transversality_tol": "homoclinic",
    "admissibility_tol": "homoclinic",
    "lin_order": "linearization", "lin_precision": "linearization", "lin_tol": "linearization",
    "degree": "obstruction", "i_range": "obstruction", "n_range": "obstruction",
    "precision": "obstruction", "C": "obstruction", "candidates": "obstruction",
    "zero_tol": "obstruction", "peel_tol": "obstruction", "graph_degree": "obstruction",
    "resonance_tol": "spectrum", "nu_bound": "spectrum",
    "oracle_degree": "oracle", "oracle_box": "oracle",
    "seed_delta": "seeds", "seed_candidates": "seeds", "seed_oracle": "seeds",
    "out_dir": "output", "write_csv": "output", "write_svg": "output",
}


@dataclass
class RunConfig:
    map_path: str = ""
    stages: tuple = STAGES
    guess: Optional[tuple] = None
    # manifolds
    order: int = 20
    iterations: int = 3
    bbox: float = 2.0                 # half-width of the sampling box
    # homoclinic search
    dedup_radius: float = 1e-6
    transversality_tol: float = 1e-6
    admissibility_tol: float = 1e-8
    # linearizing chart
    lin_order: int = 20
    lin_precision: int = 60
    lin_tol: float = 1e-30
    # peeling
    degree: int = 6
    i_range: Optional[tuple] = None
    n_range: Optional[tuple] = None
    precision: int = 100
    C: float = 0.2
    candidates: int = 2
    zero_tol: Optional[float] = None
    peel_tol: Optional[float] = None
    graph_degree: int = 10
    # spectrum
    resonance_tol: float = 1e-10
    nu_bound: int = 20
    # oracle
    oracle_degree: Optional[int] = None  # defaults to degree
    oracle_box: float = 1.0
    # seeds
    seed_delta: int = 0
    seed_candidates: int = 0
    seed_oracle: int = 0
    # output
    out_dir: str = "out"
    write_csv: bool = True
    write_svg: bool = True

    def validate(self) -> "RunConfig":
        for name in ("dedup_radius", "transversality_tol", "admissibility_tol", "lin_tol",
                     "resonance_tol", "bbox", "C", "oracle_box"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        for name in ("zero_tol", "peel_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InputError(f"{name} must be positive")
        if self.degree < 0:
            raise InputError("degree must be >= 0")
        if self.precision < 15 or self.lin_precision < 15:
            raise InputError("precision must be at least 15 digits")
        if self.order < 1 or self.lin_order < 1:
            raise InputError("chart orders must be >= 1")
        if self.iterations < 0 or self.candidates < 1:
            raise InputError("iterations must be >= 0 and candidates >= 1")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise InputError(f"unknown stages {bad}; choose from {list(STAGES)}")
        for name in ("i_range", "n_range"):
            r = getattr(self, name)
            if r is not None and (len(r) != 2 or r[1] < r[0] or r[0] < 0):
                raise InputError(f"{name} must be 'lo,hi' with 0 <= lo <= hi")
        if not self.map_path:
            raise InputError("no map file given")
        return self

    @property
    def effective_oracle_degree(self) -> int:
        return self.degree if self.oracle_degree is None else self.oracle_degree

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def _field_types():
    return {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_value(name: str, text: str):
    """Convert an INI/CLI string to the type of field ``name``."""
    f = _field_types().get(name)
    if f is None:
        raise InputError(f"unknown configuration key {name!r}")
    text = str(text).strip()
    default = f.default
    if name in ("stages",):
        return tuple(s.strip() for s in text.split(",") if s.strip())
    if name in ("guess", "i_range", "n_range"):
        if text.lower() in ("", "none", "auto"):
            return None
        conv = float if name == "guess" else int
        try:
            return tuple(conv(v) for v in text.split(","))
        except ValueError as exc:
            raise InputError(f"{name}: cannot parse {text!r}") from exc
    if name in ("zero_tol", "peel_tol", "oracle_degree"):
        if text.lower() in ("", "none", "auto"):
            return None
        try:
            return int(text) if name == "oracle_degree" else float(text)
        except ValueError as exc:
            raise InputError(f"{name}: cannot parse {text!r}") from exc
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise InputError(f"{name}: cannot parse {text!r}") from exc
    return text


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read an INI file; ``map`` paths are resolved relative to the file."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, text in parser.items(section):
            name = "map_path" if key == "map" else key
            expected = _SECTIONS.get(name)
            if expected is None:
                raise InputError(f"unknown configuration key {key!r} in [{section}]")
            if expected != section:
                raise InputError(f"key {key!r} belongs in [{expected}], found in [{section}]")
            values[name] = parse_value(name, text)
    if "map_path" in values:
        mp = Path(values["map_path"])
        if not mp.is_absolute():
            values["map_path"] = str((path.parent / mp).resolve())
    values.update(overrides or {})
    return RunConfig(**values).validate()


def bundled_config(name: str) -> Path:
    """Path of a configuration shipped with the package (e.g. ``henon-horseshoe.cfg``)."""
    ref = resources.files("nonint") / "data" / "configs" / name
    if not ref.is_file():
        raise InputError(f"no bundled config named {name!r}")
    return Path(str(ref))


def bundled_map(name: str) -> Path:
    ref = resources.files("nonint") / "data" / "maps" / name
    if not ref.is_file():
        raise InputError(f"no bundled map named {name!r}")
    return Path(str(ref))


__all__ = ["RunConfig", "STAGES", "bundled_config", "bundled_map", "load_config", "parse_value"]
