"""Command-line front end: configs, run orchestration, artifact emission.

Configs are flat INI files: a [run] section lists scenarios, and optional
[scenario.<id>] sections override per-scenario knobs.  Runs write a manifest
before anything else, then per-scenario verdict JSON, solution CSV, and
plot-data CSV files.  Exit codes: 0 clean, 1 at least one failed verdict,
2 config schema violation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

from .scenarios import CATALOG, list_scenarios

CONFIG_DIR = Path(__file__).parent / "configs"

_OVERRIDE_TYPES = {
    "num_steps": int,
    "points_per_axis": int,
    "num_paths": int,
    "seed": int,
    "radius": float,
    "horizon": float,
    "beta": float,
    "sup_tolerance": float,
    "residual_tolerance": float,
    "lam": float,
}


class SchemaError(Exception):
    """Config violates the documented schema; carries a file anchor."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        super().__init__(message)

    def anchored(self) -> str:
        loc = str(self.path) if self.path else "<config>"
        if self.line is not None:
            loc += f":{self.line}"
        return f"{loc}: {self.args[0]}"


def _find_line(path, needle) -> int | None:
    """First 1-based line whose stripped text starts with the needle."""
    try:
        text = Path(path).read_text()
    except OSError:
        return None
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip().lower().startswith(needle.lower()):
            return i
    return None


def resolve_config_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = CONFIG_DIR / f"{arg}.ini"
    if bundled.exists():
        return bundled
    raise SchemaError(f"config {arg!r} is neither a file nor a bundled config "
                      f"(bundled: {sorted(c.stem for c in CONFIG_DIR.glob('*.ini'))})",
                      path=arg)


def load_config(path: Path) -> dict:
    """Parse and validate a run config.

    Returns {"scenarios": [(spec, overrides), ...], "seed": int|None,
    "out": str|None}.  Raises SchemaError with a file:line anchor on any
    violation.
    """
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as e:
        raise SchemaError(str(e), path=path)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise SchemaError(str(e).replace("\n", " "), path=path, line=line)

    if "run" not in cp:
        raise SchemaError("missing required [run] section", path=path, line=1)
    run = cp["run"]
    if "scenarios" not in run:
        raise SchemaError("[run] must list scenarios = id, id, ...",
                          path=path, line=_find_line(path, "[run]"))
    ids = [s.strip() for s in run["scenarios"].replace("\n", ",").split(",")
           if s.strip()]
    for sid in ids:
        if sid not in CATALOG:
            raise SchemaError(
                f"unknown scenario {sid!r}; known: {sorted(CATALOG)}",
                path=path, line=_find_line(path, "scenarios"))

    seed = None
    if "seed" in run:
        try:
            seed = int(run["seed"])
        except ValueError:
            raise SchemaError(f"seed must be an integer, got {run['seed']!r}",
                              path=path, line=_find_line(path, "seed"))
    out = run.get("out") or None

    for section in cp.sections():
        if section == "run":
            continue
        if not section.startswith("scenario."):
            raise SchemaError(
                f"unexpected section [{section}]; only [run] and "
                "[scenario.<id>] are recognized",
                path=path, line=_find_line(path, f"[{section}]"))
        sid = section.split(".", 1)[1]
        if sid not in CATALOG:
            raise SchemaError(f"section [{section}] names an unknown scenario",
                              path=path, line=_find_line(path, f"[{section}]"))

    scenarios = []
    for sid in ids:
        spec = CATALOG[sid]
        overrides = {}
        section = f"scenario.{sid}"
        if section in cp:
            for key, raw in cp[section].items():
                if key not in _OVERRIDE_TYPES:
                    raise SchemaError(
                        f"unknown key {key!r} in [{section}]; allowed: "
                        f"{sorted(_OVERRIDE_TYPES)}",
                        path=path, line=_find_line(path, key))
                try:
                    overrides[key] = _OVERRIDE_TYPES[key](raw)
                except ValueError:
                    raise SchemaError(
                        f"{key} must be {_OVERRIDE_TYPES[key].__name__}, "
                        f"got {raw!r}",
                        path=path, line=_find_line(path, key))
            if "lam" in overrides and overrides["lam"] <= 0.0:
                raise SchemaError(
                    "lam <= 0 violates uniform ellipticity: the diffusion "
                    "must satisfy lam |xi|^2 <= a xi^2 <= Lam |xi|^2 with a "
                    "positive lower bound",
                    path=path, line=_find_line(path, "lam"))
        scenarios.append((spec, overrides))
    return {"scenarios": scenarios, "seed": seed, "out": out}


def apply_overrides(spec, overrides):
    """A copy of the catalog entry with config-section knobs applied."""
    if not overrides:
        return spec
    lam = overrides.pop("lam", None)
    spec = dataclasses.replace(spec, **overrides) if overrides else spec
    if lam is not None:
        base_build = spec.build_coeffs

        def build():
            return dataclasses.replace(base_build(), lam=lam)

        spec = dataclasses.replace(spec, build_coeffs=build)
    return spec


# -- artifact emission ------------------------------------------------------

def _write_rows_csv(path: Path, rows):
    """Plot-data CSV: header from row keys, 17 significant digits."""
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for row in rows:
            wr.writerow([
                f"{v:.17g}" if isinstance(v, float) else str(v)
                for v in (row[k] for k in keys)
            ])


_PLOT_STEMS = {"error_vs_h", "contraction_vs_beta"}


def _artifact_files(spec):
    """Planned artifact file names for one scenario."""
    files = [f"{spec.scenario_id}/verdicts.json"]
    if spec.kind == "solve":
        files.append(f"{spec.scenario_id}/solution.csv")
        files.append(f"{spec.scenario_id}/summary.json")
    if "h_convergence" in spec.checks:
        files.append(f"{spec.scenario_id}/error_vs_h.csv")
    if "time_shift" in spec.checks:
        files.append(f"{spec.scenario_id}/norm_vs_tau.csv")
    if spec.scenario_id == "beta_sweep":
        files.append(f"{spec.scenario_id}/contraction_vs_beta.csv")
    if spec.scenario_id == "time_shift_sweep":
        for sid in spec.extras.get("scenarios", ()):
            files.append(f"{spec.scenario_id}/norm_vs_tau_{sid}.csv")
    return files


def write_manifest(out_dir: Path, config_path, specs, seed, artifacts,
                   status="started"):
    manifest = {
        "config": str(config_path),
        "scenarios": [
            {"id": s.scenario_id, "kind": s.kind, "description": s.description}
            for s in specs
        ],
        "out_dir": str(out_dir),
        "seed": seed,
        "artifacts": artifacts,
        "status": status,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _run_one(spec, seed, out_dir: Path):
    from .verify import run_scenario

    bundle, artifacts = run_scenario(spec, seed=seed)
    sdir = out_dir / spec.scenario_id
    sdir.mkdir(exist_ok=True)
    written = []

    def emit(name):
        written.append(f"{spec.scenario_id}/{name}")

    (sdir / "verdicts.json").write_text(bundle.to_json())
    emit("verdicts.json")
    for stem, obj in sorted(artifacts.items()):
        if stem == "solution":
            obj.to_csv(sdir / "solution.csv")
            emit("solution.csv")
            (sdir / "summary.json").write_text(obj.summary_json() + "\n")
            emit("summary.json")
        else:
            _write_rows_csv(sdir / f"{stem}.csv", obj)
            emit(f"{stem}.csv")
    return bundle, written


def cmd_run(args) -> int:
    try:
        cfg_path = resolve_config_path(args.config)
        cfg = load_config(cfg_path)
    except SchemaError as e:
        print(e.anchored(), file=sys.stderr)
        return 2

    seed = args.seed if args.seed is not None else cfg["seed"]
    out_dir = Path(args.out or cfg["out"]
                   or f"runs/{cfg_path.stem}")
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        print(f"{out_dir}: output directory is not empty (use --force)",
              file=sys.stderr)
        return 2
    out_dir.mkdir(parents=True, exist_ok=True)

    specs = [apply_overrides(spec, dict(ov)) for spec, ov in cfg["scenarios"]]
    planned = [f for s in specs for f in _artifact_files(s)]
    write_manifest(out_dir, cfg_path, specs, seed, planned)

    failed = False
    emitted = []
    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(
                lambda s: _run_one(s, seed, out_dir), specs))
    else:
        results = [_run_one(s, seed, out_dir) for s in specs]
    for spec, (bundle, written) in zip(specs, results):
        emitted.extend(written)
        print(f"== {spec.scenario_id}")
        print(bundle.table())
        failed = failed or not bundle.all_passed

    write_manifest(out_dir, cfg_path, specs, seed, emitted,
                   status="failed" if failed else "completed")
    print(f"artifacts in {out_dir}")
    return 1 if failed else 0


def _load_custom_catalog(path: str):
    """A custom catalog file selects bundled scenarios by section name."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        print(f"{path}: {e}", file=sys.stderr)
        return None
    entries = []
    for section in cp.sections():
        if section in CATALOG:
            entries.append(CATALOG[section])
    return entries


def cmd_list(args) -> int:
    if args.catalog is not None:
        entries = _load_custom_catalog(args.catalog)
        if entries is None:
            return 2
    else:
        entries = list_scenarios()
    if args.json:
        print(json.dumps([
            {"id": s.scenario_id, "kind": s.kind,
             "description": s.description, "provenance": s.provenance}
            for s in entries
        ], indent=2))
        return 0
    for s in entries:
        print(f"{s.scenario_id:<18} {s.description}  [{s.provenance}]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bspdelab",
        description="run and certify the bundled solver scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a run config")
    run.add_argument("config", help="config file path or bundled config name")
    run.add_argument("--jobs", type=int, default=1,
                     help="scenario-level parallelism")
    run.add_argument("--seed", type=int, default=None,
                     help="global seed, overrides the config")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--force", action="store_true",
                     help="allow a non-empty output directory")
    run.set_defaults(fn=cmd_run)

    lst = sub.add_parser("list", help="print the scenario catalog")
    lst.add_argument("--json", action="store_true")
    lst.add_argument("--catalog", default=None,
                     help="custom catalog file selecting bundled scenarios")
    lst.set_defaults(fn=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
