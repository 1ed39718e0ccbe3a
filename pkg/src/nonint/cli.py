"""Command-line interface.

    nonint full henon-horseshoe.cfg
    nonint oracle --map maps/linear-saddle.yaml --degree 2

Every :class:`RunConfig` field is also a flag (``--zero-tol``, ``--i-range 5,45``,
...); flags override the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import traceback
from pathlib import Path

from . import __version__
from .config import RunConfig, bundled_config, load_config, parse_value
from .errors import InputError, NonintError

SUBCOMMANDS = {
    "fixed-point": ("fixed-point",),
    "spectrum": ("fixed-point", "spectrum"),
    "manifold": ("fixed-point", "manifold"),
    "homoclinic": ("fixed-point", "manifold", "homoclinic"),
    "obstruct": ("fixed-point", "spectrum", "manifold", "homoclinic", "obstruct"),
    "oracle": ("fixed-point", "oracle"),
    "full": ("fixed-point", "spectrum", "manifold", "homoclinic", "obstruct", "oracle"),
}

_SKIP = {"stages"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-").lower()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonint", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} stage" if name != "full" else "run everything")
        sp.add_argument("config", nargs="?", help="INI run configuration (or a bundled config name)")
        sp.add_argument("--map", dest="map_path", help="YAML map file")
        sp.add_argument("--timestamp", help="fixed timestamp to write (for reproducible files)")
        sp.add_argument("--no-files", action="store_true", help="print JSON only, write nothing")
        sp.add_argument("-v", "--verbose", action="store_true")
        for f in dataclasses.fields(RunConfig):
            if f.name in _SKIP or f.name == "map_path":
                continue
            sp.add_argument(_flag(f.name), dest=f.name, metavar="VALUE", default=None,
                            help=f"(default: {f.default!r})")
    return ap


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        if f.name in _SKIP or f.name == "map_path":
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = parse_value(f.name, v)
    if args.map_path:
        overrides["map_path"] = str(Path(args.map_path).resolve())
    overrides["stages"] = SUBCOMMANDS[args.command]
    if args.config:
        path = Path(args.config)
        if not path.exists():
            path = bundled_config(args.config)
        return load_config(path, overrides)
    return RunConfig(**overrides).validate()


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from .pipeline import run_pipeline
        from .report import build_document, dumps, emit

        cfg = _resolve_config(args)
        result = run_pipeline(cfg)
        if args.no_files:
            sys.stdout.write(dumps(build_document(result, args.timestamp)))
        else:
            paths = emit(result, timestamp=args.timestamp)
            summary = {"verdict": None if result.certificate is None else result.certificate.verdict,
                       "files": {k: str(v) for k, v in sorted(paths.items())}}
            sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
        return 0
    except NonintError as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2 if isinstance(exc, InputError) else 1
    except Exception as exc:  # tool malfunction
        err = {"error": type(exc).__name__, "message": str(exc),
               "traceback": traceback.format_exc().splitlines()[-5:]}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
