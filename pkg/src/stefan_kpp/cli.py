"""Command-line entry point: ``stefan-kpp {waves,simulate,threshold,verify}``.

Outputs land in ``<out>/<config-hash>/`` and every directory carries a
``manifest.json`` with the config hash, tool version and file digests.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from stefan_kpp import __version__
from stefan_kpp.classifier import CertificateMonitor, classify
from stefan_kpp.fbp_solver import InitialData, SolverConfig, SolverError, run
from stefan_kpp.kinetics import nonlinearity_from_spec, validate_kpp
from stefan_kpp.threshold import NoUpperClassFound, Target, ThresholdError, find_threshold, transition_evidence
from stefan_kpp.verify import SUITES, run_suite
from stefan_kpp.wave_catalog import CatalogError, ProblemParams, Regime, build_catalog

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CATALOG = 2
EXIT_SOLVER = 3
EXIT_UNBOUNDED = 4
EXIT_USAGE = 64

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "nonlinearity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["logistic", "weighted_logistic", "polynomial"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "a": _NUM,
                        "kappa": _POS,
                        "coeffs": {"type": "array", "items": _NUM, "minItems": 2},
                    },
                },
            },
        },
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["beta"],
            "properties": {"mu": _POS, "beta": {"type": "number", "minimum": 0}},
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h0": _POS,
                "shape": {"enum": ["cosine", "quartic", "table"]},
                "sigma": {"type": "number", "minimum": 0},
                "table": {"type": "array", "items": {"type": "array", "items": _NUM,
                                                     "minItems": 2, "maxItems": 2}},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_grid": {"type": "integer", "minimum": 100},
                "dt_max": _POS,
                "cfl": _POS,
                "t_max": _POS,
                "record_every": _POS,
                "level_m": _POS,
                "snapshot_every": _POS,
            },
        },
        "waves": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"delta_fraction": _POS, "q_tol": _POS, "ode_tol": _POS, "dz": _POS},
        },
        "threshold": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {"oneOf": [{"enum": list(Target.ALL)},
                                     {"type": "array", "items": {"enum": list(Target.ALL)}, "minItems": 1}]},
                "rel_tol": {"type": "number", "minimum": 1e-3},
                "sigma_max": _POS,
                "evidence": {"type": "boolean"},
            },
        },
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config -------------------------------------------------------------------

def load_config(path: Optional[Path], t_max: Optional[float] = None, n_grid: Optional[int] = None) -> dict:
    if path is None:
        raise UsageError("this command needs -c/--config")
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {where}: {exc.message}") from exc
    cfg = copy.deepcopy(cfg)
    if t_max is not None:
        cfg.setdefault("solver", {})["t_max"] = t_max
    if n_grid is not None:
        cfg.setdefault("solver", {})["n_grid"] = n_grid
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def problem_from_config(cfg: dict) -> ProblemParams:
    f = nonlinearity_from_spec(cfg.get("nonlinearity", {"name": "logistic"}))
    report = validate_kpp(f)
    if not report:
        raise UsageError(f"nonlinearity fails the KPP check at u={report.violation_u}: {report.reason}")
    w = cfg.get("waves", {})
    pr = cfg["problem"]
    return ProblemParams(f, float(pr.get("mu", 1.0)), float(pr["beta"]),
                         q_tol=w.get("q_tol", 1e-8), ode_tol=w.get("ode_tol", 1e-10), dz=w.get("dz", 0.01))


def solver_from_config(cfg: dict, params: ProblemParams) -> SolverConfig:
    ini = cfg.get("initial", {})
    table = ini.get("table")
    init = InitialData(float(ini.get("h0", 1.0)), ini.get("shape", "cosine"), float(ini.get("sigma", 1.0)),
                       tuple(tuple(r) for r in table) if table else None)
    s = dict(cfg.get("solver", {}))
    s.setdefault("t_max", 50.0)
    return SolverConfig(params, init, **s)


# -- atomic output ------------------------------------------------------------

class OutputDir:
    def __init__(self, root: Path, cfg: dict, command: str):
        self.hash = config_hash(cfg)
        self.path = Path(root) / self.hash
        self.path.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.command = command
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        target = self.path / name
        target.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files[name] = hashlib.sha256(data).hexdigest()
        return target

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        return self.write(name, buf.getvalue())

    def finish(self) -> Path:
        # commands sharing a config hash share the directory; merge their records
        files, commands = {}, []
        prev = self.path / "manifest.json"
        if prev.exists():
            try:
                old = json.loads(prev.read_text())
                if old.get("config_hash") == self.hash:
                    files, commands = old.get("files", {}), old.get("commands", [])
            except json.JSONDecodeError:
                pass
        files.update(self.files)
        commands = sorted(set(commands) | {self.command})
        manifest = {"tool": "stefan-kpp", "version": __version__, "commands": commands,
                    "config_hash": self.hash, "config": self.cfg, "files": dict(sorted(files.items()))}
        return self.write_json("manifest.json", manifest)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- commands -----------------------------------------------------------------

def _catalog(cfg: dict, params: ProblemParams):
    frac = cfg.get("waves", {}).get("delta_fraction", 0.5)
    return build_catalog(params, delta_fraction=frac, cache=os.environ.get("STEFAN_KPP_CACHE"))


def cmd_waves(cfg: dict, out: OutputDir) -> int:
    params = problem_from_config(cfg)
    cat = _catalog(cfg, params)
    files = {}
    for name, prof in cat.profiles().items():
        fname = f"{name}.csv"
        out.write_csv(fname, ["z", "q"], zip(prof.z_grid, prof.q_values))
        out.write_json(f"{name}.json", prof.header())
        files[name] = fname
    out.write_json("catalog.json", cat.summary(files))
    out.finish()
    print(f"regime={cat.regime} c0={cat.c0:.10g} c*={cat.c_star:.10g} beta*={cat.beta_star:.10g}")
    print(f"wrote {out.path}")
    return EXIT_OK


def cmd_simulate(cfg: dict, out: OutputDir) -> int:
    params = problem_from_config(cfg)
    cat = _catalog(cfg, params)
    scfg = solver_from_config(cfg, params)
    mon = CertificateMonitor(cat, stop=False)
    traj = run(scfg, monitor=mon, monitor_every=1.0)
    cls = classify(traj, cat, mon)
    out.write_csv("trajectory.csv", ["t", "g", "h", "g_dot", "h_dot", "sup_u", "chi_m"], traj.table())
    for snap in traj.snapshots:
        out.write_csv(f"snapshots/t={snap.t:011.4f}.csv", ["x", "u"], zip(snap.x, snap.w))
    report = cls.to_dict()
    report.update({"terminal": traj.terminal, "t_final": traj.t[-1], "g_final": traj.g[-1],
                   "h_final": traj.h[-1], "regime": cat.regime, "c_star": cat.c_star,
                   "beta_star": cat.beta_star})
    out.write_json("classification.json", report)
    out.finish()
    print(f"verdict={cls.verdict} terminal={traj.terminal} t={traj.t[-1]:.4g}")
    print(f"wrote {out.path}")
    return EXIT_OK


def cmd_threshold(cfg: dict, out: OutputDir, jobs: int = 1) -> int:
    params = problem_from_config(cfg)
    cat = _catalog(cfg, params)
    tmpl = solver_from_config(cfg, params)
    tb = cfg.get("threshold", {})
    targets = tb.get("target", Target.VANISH_TO_SPREAD)
    targets = [targets] if isinstance(targets, str) else list(targets)
    rel_tol = tb.get("rel_tol", 1e-2)
    sigma_max = tb.get("sigma_max", 100.0)
    report = {"regime": cat.regime, "edges": [], "evaluations": []}
    rows = []
    code = EXIT_OK
    for target in targets:
        try:
            res = find_threshold(tmpl, cat, target, rel_tol, sigma_max, jobs=jobs)
        except NoUpperClassFound as exc:
            report["edges"].append({"target": target, "sigma_star": "inf", "reason": str(exc)})
            evals = exc.evaluations
            code = EXIT_UNBOUNDED
        else:
            edge = res.to_dict()
            evals = res.evaluations
            edge.pop("evaluations")
            report["edges"].append(edge)
            if (tb.get("evidence", True) and cat.regime == Regime.MEDIUM
                    and target == Target.VANISH_TO_SPREAD):
                report["transition_evidence"] = transition_evidence(tmpl, cat, res.midpoint).to_dict()
        for e in evals:
            report["evaluations"].append({"target": target, **e.__dict__})
            rows.append((target, e.sigma, e.verdict, e.t_decided if e.t_decided is not None else "", e.t_max))
    out.write_json("threshold.json", report)
    out.write_csv("evaluations.csv", ["target", "sigma", "verdict", "t_decided", "t_max"], rows)
    out.finish()
    for edge in report["edges"]:
        if "sigma_lo" in edge:
            print(f"{edge['target']}: sigma in [{edge['sigma_lo']:.6g}, {edge['sigma_hi']:.6g}]")
        else:
            print(f"{edge['target']}: sigma* = inf ({edge['reason']})", file=sys.stderr)
    print(f"wrote {out.path}")
    return code


def cmd_verify(suite: str, root: Path, jobs: int = 1) -> int:
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    results = run_suite(suite, jobs)
    for r in results:
        print(r.line())
    out = OutputDir(root, {"verify": suite}, "verify")
    out.write_json("verify.json", {"suite": suite, "results": [r.to_dict() for r in results]})
    out.finish()
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"verify {suite}: FAILED at criterion {failed[0].id} ({failed[0].name})", file=sys.stderr)
        return EXIT_VERIFY
    print(f"verify {suite}: all {len(results)} criteria passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="JSON run configuration")
    common.add_argument("-o", "--out", type=Path, default=Path("out"), help="output root directory")
    common.add_argument("--t-max", type=float, default=None, help="override solver.t_max")
    common.add_argument("--n-grid", type=int, default=None, help="override solver.n_grid")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")

    ap = _Parser(prog="stefan-kpp", description="Advective Fisher-KPP free-boundary toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("waves", parents=[common], help="build the wave catalog")
    sub.add_parser("simulate", parents=[common], help="run and classify one simulation")
    sub.add_parser("threshold", parents=[common], help="bisect the sharp threshold in sigma")
    v = sub.add_parser("verify", parents=[common], help="run an acceptance suite")
    v.add_argument("suite", help=f"one of {', '.join(SUITES)}")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("stefan-kpp: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.out, args.jobs)
        cfg = load_config(args.config, args.t_max, args.n_grid)
        out = OutputDir(args.out, cfg, args.command)
        if args.command == "waves":
            return cmd_waves(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        return cmd_threshold(cfg, out, args.jobs)
    except UsageError as exc:
        print(f"stefan-kpp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CatalogError as exc:
        print(f"stefan-kpp: catalog error: {exc}", file=sys.stderr)
        return EXIT_CATALOG
    except SolverError as exc:
        t = getattr(exc, "t", None)
        where = f" at t={t:.6g}" if t is not None else ""
        print(f"stefan-kpp: solver error{where}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ThresholdError as exc:
        print(f"stefan-kpp: threshold error: {exc}", file=sys.stderr)
        return EXIT_UNBOUNDED
    except ValueError as exc:
        print(f"stefan-kpp: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
