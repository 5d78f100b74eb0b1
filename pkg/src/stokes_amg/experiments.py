"""Experiment files, batch runners and the ``stokes-amg`` command line.

An experiment file holds a JSON object::

    {
      "problem": "BFS2D",                # BFS2D | Channel2D | CylinderFile
      "discretization": "TH",            # TH | SV
      "levels": [8, 16, 32],             # structured resolution, or refinement count for files
      "mesh_file": null,                 # JSON mesh; "bundled:<name>" for packaged meshes
      "solvers": [{"variant": "DCall", "eta": 0.75}, {"variant": "Uzawa"}],
      "scan": {"level": 8, "base": {...}, "grid": {"eta": [0.5, 0.75, 1.0]}, "tol": 1e-8},
      "stats": {"systems": ["ISO", "HO"]},
      "mms": {"discretizations": ["TH", "SV"], "levels": [8, 16, 32]},
      "repeats": 5,
      "seed": 1234
    }

Only the block needed by the chosen command has to be present.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .config import SolverConfig
from .errors import ConfigError, UnsupportedDiscretization
from .krylov import relative_residual

log = logging.getLogger("stokes_amg")

THREADS_ENV = "STOKES_AMG_THREADS"
DISCRETIZATIONS = ("TH", "SV")
PROBLEMS = ("BFS2D", "Channel2D", "CylinderFile")
SYSTEMS = ("ISO", "HO")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2

CONVERGED, DIVERGED, REFUSED, ERROR = "converged", "diverged", "refused", "error"

# documented layout of the ``stats`` report; checked by :func:`validate_stats`
STATS_SCHEMA = {
    "problem": str,
    "discretization": str,
    "hierarchies": [{
        "level": int,
        "system": str,
        "n": int,
        "n_levels": int,
        "notes": [str],
        "levels": [{
            "level": int, "nx": int, "ny": int, "n_p": int, "n": int, "nnz": int,
            "velocity_pressure_ratio": float, "ratio_drift": float, "relax_mode": str,
        }],
    }],
}


@dataclass
class ExperimentSpec:
    problem: str = "BFS2D"
    discretization: str = "TH"
    levels: list = field(default_factory=lambda: [8])
    mesh_file: str | None = None
    solvers: list = field(default_factory=list)
    scan: dict | None = None
    stats: dict | None = None
    mms: dict | None = None
    repeats: int = 5
    seed: int = 1234

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("spec must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
        spec = cls(**d)
        spec.solvers = [SolverConfig.from_dict(s).validate() for s in spec.solvers]
        return spec.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.discretization not in DISCRETIZATIONS:
            raise ConfigError(f"discretization must be one of {DISCRETIZATIONS}")
        if not isinstance(self.levels, list) or not all(isinstance(k, int) for k in self.levels):
            raise ConfigError("levels must be a list of integers")
        if self.problem == "CylinderFile":
            if any(k < 0 for k in self.levels):
                raise ConfigError("refinement counts must be non-negative")
            mesh_path(self.mesh_file or "bundled:cylinder_channel")
        elif any(k < 1 for k in self.levels):
            raise ConfigError("structured resolutions must be positive")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")
        if self.scan is not None:
            for key in ("grid", "base"):
                if key not in self.scan:
                    raise ConfigError(f"scan block needs {key!r}")
            if not isinstance(self.scan["grid"], dict) or not self.scan["grid"]:
                raise ConfigError("scan grid must map parameters to value lists")
            SolverConfig.from_dict(self.scan["base"]).validate()
        if self.stats is not None:
            bad = set(self.stats.get("systems", ["ISO"])) - set(SYSTEMS)
            if bad:
                raise ConfigError(f"unknown hierarchy systems {sorted(bad)}")
        return self


def load_spec(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from exc
    return ExperimentSpec.from_dict(data)


def mesh_path(name):
    if name.startswith("bundled:"):
        p = resources.files("stokes_amg") / "data" / f"{name.split(':', 1)[1]}.json"
    else:
        p = Path(name)
    if not p.is_file():
        raise ConfigError(f"mesh file {name!r} not found")
    return p


def build_mesh(spec, level):
    """Mesh of ``spec.problem`` at refinement ``level`` (before any SV split)."""
    from .mesh import BackwardFacingStep, channel, quadrisect, read_mesh, structured_tri_mesh
    if spec.problem == "BFS2D":
        return structured_tri_mesh(6 * level, 2 * level, BackwardFacingStep())
    if spec.problem == "Channel2D":
        return structured_tri_mesh(4 * level, level, channel())
    m = read_mesh(mesh_path(spec.mesh_file or "bundled:cylinder_channel"))
    for _ in range(level):
        m = quadrisect(m)[0]
    return m


def build_system(spec, level):
    from .fem import assemble_scott_vogelius, assemble_taylor_hood
    from .mesh import barycentric_refine
    m = build_mesh(spec, level)
    if spec.discretization == "SV":
        return assemble_scott_vogelius(barycentric_refine(m)[0], spec.problem)
    return assemble_taylor_hood(m, spec.problem)


@dataclass
class RunRecord:
    """One solve. ``iterations == len(history) - 1`` whenever a solve ran."""

    problem: str
    discretization: str
    level: int
    solver: str
    status: str
    dofs: dict = field(default_factory=dict)
    iterations: int | None = None
    converged: bool = False
    setup_time: float | None = None
    solve_time: float | None = None
    relative_time: float | None = None
    final_residual: float | None = None
    true_residual: float | None = None
    reason: str = ""
    config: dict = field(default_factory=dict)
    hierarchy: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def total_time(self):
        if self.setup_time is None:
            return None
        return self.setup_time + self.solve_time

    def to_dict(self, timings=True):
        d = asdict(self)
        if not timings:
            for k in ("setup_time", "solve_time", "relative_time"):
                d.pop(k)
        return d


def _run_one(spec, level, sys0, cfg, repeats, shared):
    from .precond import build_preconditioner, solve
    rec = RunRecord(spec.problem, spec.discretization, level, cfg.label, ERROR,
                    dofs={"nx": sys0.nx, "ny": sys0.ny, "n_p": sys0.n_p, "n": sys0.n},
                    config=cfg.to_dict())
    best = None
    try:
        for _ in range(repeats):
            setup = build_preconditioner(sys0, cfg, sys1=shared.get("sys1"))
            if setup.sys1 is not None:
                shared["sys1"] = setup.sys1
            res = solve(sys0, cfg, setup=setup)
            t = (res.setup_time, res.solve_time)
            if best is None:
                best, first = t, res
            elif sum(t) < sum(best):
                best = t
    except UnsupportedDiscretization as exc:
        rec.status, rec.reason = REFUSED, str(exc)
        return rec
    except Exception as exc:            # recorded per run, never fatal for the batch
        rec.reason = f"{type(exc).__name__}: {exc}"
        log.warning("%s level %s %s failed: %s", spec.problem, level, cfg.label, rec.reason)
        return rec
    rep = first.report
    rec.iterations = rep.iterations
    rec.converged = bool(rep.converged)
    rec.status = CONVERGED if rep.converged else DIVERGED
    rec.setup_time, rec.solve_time = best
    rec.history = [float(h) for h in rep.history]
    rec.final_residual = float(rep.final_residual)
    b = sys0.rhs
    if sys0.enclosed:
        b = b.copy()
        b[sys0.n_u:] -= b[sys0.n_u:].mean()
    rec.true_residual = float(relative_residual(sys0.K, first.x, b))
    rec.hierarchy = list(first.setup.stats.get("levels", []))
    return rec


def _solve_level(spec, level, repeats):
    sys0 = build_system(spec, level)
    shared = {}
    recs = [_run_one(spec, level, sys0, cfg, repeats, shared) for cfg in spec.solvers]
    ref = [r for r in recs if r.config.get("variant") == "Uzawa" and r.converged]
    if ref:
        t0 = ref[0].total_time
        for r in recs:
            if r.total_time is not None and t0 > 0:
                r.relative_time = r.total_time / t0
    return recs


def _map_levels(fn, spec, workers, deterministic):
    if deterministic or workers <= 1 or len(spec.levels) <= 1:
        return [fn(k) for k in spec.levels]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, spec.levels))


def cmd_solve(spec, repeats=None, workers=1, deterministic=False):
    """RunRecords for every level x solver, in spec order."""
    repeats = spec.repeats if repeats is None else repeats
    if not spec.solvers:
        return []
    per_level = _map_levels(lambda k: _solve_level(spec, k, repeats), spec, workers, deterministic)
    return [r for recs in per_level for r in recs]


def cmd_scan(spec):
    """Wrap :func:`parameter_scan` on one level; returns the ScanResult."""
    from .precond import parameter_scan
    sc = spec.scan
    if sc is None:
        raise ConfigError("spec has no scan block")
    level = sc.get("level", spec.levels[0])
    sys0 = build_system(spec, level)
    base = SolverConfig.from_dict(sc["base"]).validate()
    return parameter_scan(sys0, base, sc["grid"], tol=sc.get("tol", 1e-8))


def scan_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.params + ["iterations", "converged", "factor"])
    for row in result.rows:
        w.writerow([repr(row[p]) for p in result.params]
                   + [row["iterations"], int(row["converged"]), f"{row['factor']:.10f}"])
    return buf.getvalue()


def cmd_stats(spec):
    """Hierarchy statistics per level for the ISO and/or high-order systems."""
    from .amg import hierarchy_for
    from .fem import iso_companion
    systems = (spec.stats or {}).get("systems", ["ISO"])
    base = SolverConfig.from_dict((spec.stats or {}).get("config", {}))
    opts = base.amg_options()
    out = {"problem": spec.problem, "discretization": spec.discretization, "hierarchies": []}
    for level in spec.levels:
        sys0 = build_system(spec, level)
        for name in systems:
            if name == "ISO":
                sysl = iso_companion(sys0)
                H = hierarchy_for(sysl, opts, smoothers=False)
            else:
                sysl = sys0
                aux = sys0.extras["Ap_dg"] if sys0.disc == "SV" else None
                # same unguarded hierarchy as the HO-AMG preconditioner
                H = hierarchy_for(sys0, replace(opts, max_ratio_drift=None), pressure_aux=aux,
                                  smoothers=False)
            st = H.stats()
            out["hierarchies"].append({"level": level, "system": name, "n": int(sysl.n),
                                       "n_levels": st["n_levels"], "notes": st["notes"],
                                       "levels": st["levels"]})
    return out


def _check(value, schema, path):
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ValueError(f"{path}: expected an object")
        for k, sub in schema.items():
            if k not in value:
                raise ValueError(f"{path}.{k}: missing")
            _check(value[k], sub, f"{path}.{k}")
    elif isinstance(schema, list):
        if not isinstance(value, list):
            raise ValueError(f"{path}: expected a list")
        for i, v in enumerate(value):
            _check(v, schema[0], f"{path}[{i}]")
    elif schema is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValueError(f"{path}: expected a number")
    elif not isinstance(value, schema) or isinstance(value, bool) and schema is int:
        raise ValueError(f"{path}: expected {schema.__name__}")


def validate_stats(report):
    """Raise ``ValueError`` unless ``report`` follows :data:`STATS_SCHEMA`."""
    _check(report, STATS_SCHEMA, "$")
    return True


def cmd_mms(spec):
    from .mms import mms_study
    block = spec.mms or {}
    discs = block.get("discretizations", list(DISCRETIZATIONS))
    levels = block.get("levels", [8, 16, 32])
    return [asdict(r) for d in discs for r in mms_study(d, levels)]


# -- command line ------------------------------------------------------------

def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be positive")
    return n


def _write(out, name, text):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _summary_csv(records, timings):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["problem", "discretization", "level", "solver", "n", "status", "iterations"]
    if timings:
        head += ["setup_time", "solve_time", "relative_time"]
    w.writerow(head)
    for r in records:
        row = [r.problem, r.discretization, r.level, r.solver, r.dofs.get("n"), r.status,
               "" if r.iterations is None else r.iterations]
        if timings:
            row += ["" if v is None else f"{v:.6g}" for v in (r.setup_time, r.solve_time, r.relative_time)]
        w.writerow(row)
    return buf.getvalue()


def build_parser():
    p = argparse.ArgumentParser(prog="stokes-amg",
                                description="Monolithic AMG solvers for 2D Stokes saddle systems.")
    p.add_argument("command", choices=("solve", "scan", "stats", "mms"))
    p.add_argument("--spec", required=True, help="experiment spec (JSON)")
    p.add_argument("--out", type=Path, default=None, help="directory for reports")
    p.add_argument("--repeats", type=int, default=None,
                   help="timing repeats per run; the minimum is reported")
    p.add_argument("--deterministic", action="store_true",
                   help="sequential batch order and no wall times in reports")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker count for independent runs (default ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = load_spec(args.spec)
        workers = args.threads if args.threads is not None else _default_threads()
        if workers < 1:
            raise ConfigError("--threads must be positive")
        if args.repeats is not None and args.repeats < 1:
            raise ConfigError("--repeats must be positive")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    np.random.seed(spec.seed)
    timings = not args.deterministic
    t0 = time.perf_counter()
    try:
        if args.command == "solve":
            records = cmd_solve(spec, args.repeats, workers, args.deterministic)
            _write(args.out, "runs.json", _dumps([r.to_dict(timings) for r in records]))
            _write(args.out, "summary.csv", _summary_csv(records, timings))
            sys.stdout.write(_summary_csv(records, timings))
            failed = [r for r in records if r.status in (DIVERGED, ERROR)]
            code = EXIT_FAILED if failed else EXIT_OK
        elif args.command == "scan":
            res = cmd_scan(spec)
            text = scan_csv(res)
            _write(args.out, "scan.csv", text)
            _write(args.out, "optimum.json", _dumps(res.optimum))
            sys.stdout.write(text)
            print("optimum:", json.dumps(res.optimum, sort_keys=True))
            code = EXIT_OK
        elif args.command == "stats":
            rep = cmd_stats(spec)
            validate_stats(rep)
            _write(args.out, "stats.json", _dumps(rep))
            for h in rep["hierarchies"]:
                drift = [round(l["ratio_drift"], 3) for l in h["levels"]]
                print(f"level {h['level']} {h['system']}: n={h['n']} levels={h['n_levels']} "
                      f"drift={drift}" + (f" notes={h['notes']}" if h["notes"] else ""))
            code = EXIT_OK
        else:
            rows = cmd_mms(spec)
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            _write(args.out, "mms.csv", buf.getvalue())
            _write(args.out, "mms.json", _dumps(rows))
            sys.stdout.write(buf.getvalue())
            code = EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
