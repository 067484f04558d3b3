"""Command-line driver for the benchmark experiments.

Verbs::

    symstress gen-mesh   --n 8 --jitter 0.2 --seed 0 --levels 2 --out meshes/unit
    symstress converge   --case example2 --scheme jm,afw1 --delta 10,1000 --levels 0-3
    symstress stokes     --scheme sv,ht --delta 10,1000,100000 --levels 0-4
    symstress robustness --case example2 --scheme jm,afw1 --n 4 --levels 0-1
    symstress transient  --scheme jm,afw1 --n 20
    symstress all        --out data [--config roster.ini]
    symstress rates      data/rigid_body_motion_jm_1.csv

Experiments can also be listed in an INI file, one per section, with the
keys of :class:`ExperimentConfig`.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import SchemeConfig, assemble_system
from .cases import CASES, compute_errors
from .linsolve import factorize, solve_direct
from .mesh import generate_unit_square, refine_uniform, write_mesh
from .robustness import DenseLimitError, robustness_report
from .transient import run_transient, write_series

__all__ = [
    "ExperimentConfig",
    "ELASTICITY_HEADER",
    "STOKES_HEADER",
    "ROSTER",
    "parse_levels",
    "load_config",
    "run_experiment",
    "run_convergence",
    "run_robustness",
    "run_transient_experiment",
    "run_all_paper_experiments",
    "rate_table",
    "main",
]

log = logging.getLogger("symstress")

ELASTICITY_HEADER = ["ref", "Bnd", "sigma_error", "displacement_error", "omega_err"]
STOKES_HEADER = ["ref", "Ra", "velocity_error", "pressure_error", "divergence_error"]
MODES = ("convergence", "stokes", "robustness", "transient")
STOKES_CASES = ("no_flow", "stokes_noflow")

# Data files of the reference study that this package does not produce.
ABSENT = {
    "polar_hz_3.csv": "Hu-Zhang elements are not implemented",
    "polar_extra_hz_3.csv": "Hu-Zhang elements are not implemented",
    "polar_3d_jm_1.csv": "three-dimensional runs are out of scope",
    "polar_3d_afw_1.csv": "three-dimensional runs are out of scope",
}

ROSTER = """
[rigid_body_motion]
case = rigid_body_motion
schemes = jm, peers, afw1
levels = 0-4

[transverse_isotropic]
case = transverse_isotropic
schemes = jm, peers, afw1, afw2, afw3
levels = 0-3

[polar_jm]
case = polar
schemes = jm
n = 32
levels = 0-2

[polar_afw]
case = polar
schemes = afw3
levels = 0-3

[polar_extra]
case = polar_extra
schemes = jm, afw3
levels = 0-3

[no_flow]
mode = stokes
case = no_flow
schemes = sv, ht
levels = 0-4

[transient]
mode = transient
case = transient_polar
schemes = jm, afw1
deltas = 1000
n = 20
dt = 0.01
T = 1.5
"""


def parse_levels(text) -> list:
    """``"0-3"`` -> ``[0, 1, 2, 3]``; ``"1,3"`` -> ``[1, 3]``; ``"2"`` -> ``[0, 1, 2]``."""
    if isinstance(text, int):
        return list(range(text + 1))
    text = str(text).strip()
    if "-" in text:
        a, b = text.split("-", 1)
        out = list(range(int(a), int(b) + 1))
    elif "," in text:
        out = sorted({int(t) for t in text.split(",") if t.strip()})
    else:
        out = list(range(int(text) + 1))
    if not out or min(out) < 0:
        raise ValueError(f"bad level specification {text!r}")
    return out


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    return [float(t) for t in str(text).split(",") if t.strip()]


def _names(text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t.strip() for t in str(text).split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    """One experiment: a case, schemes, data scales and a mesh sequence."""

    case: str
    schemes: list
    deltas: list = field(default_factory=lambda: [10.0, 1000.0, 100000.0])
    n: int = 8
    jitter: float = 0.2
    seed: int = 0
    levels: list = field(default_factory=lambda: [0, 1, 2, 3])
    out: str = "data"
    mode: str = "convergence"
    mu: float | None = None
    dt: float = 0.01
    T: float = 1.5
    name: str = ""

    def __post_init__(self):
        self.schemes = [SchemeConfig.parse(s) if isinstance(s, str) else s for s in _names(self.schemes)]
        self.deltas = _floats(self.deltas)
        self.levels = parse_levels(self.levels) if not isinstance(self.levels, list) else self.levels
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; choose from {sorted(CASES)}")
        stokes_case = self.case in STOKES_CASES
        for s in self.schemes:
            if s.is_stokes != stokes_case:
                raise ValueError(f"scheme {s.label} cannot run case {self.case}")
        if (self.mode == "stokes") != stokes_case:
            raise ValueError("stokes mode goes with the no_flow case only")
        if not self.deltas or min(self.deltas) <= 0:
            raise ValueError("deltas must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")

    @classmethod
    def from_section(cls, name: str, section) -> ExperimentConfig:
        known = {f.name: f for f in fields(cls)}
        kw = {"name": name}
        for key, value in section.items():
            if key not in known:
                raise ValueError(f"[{name}] unknown key {key!r}")
            kw[key] = value
        for key in ("n", "seed"):
            if key in kw:
                kw[key] = int(kw[key])
        for key in ("jitter", "dt", "T", "mu"):
            if key in kw:
                kw[key] = float(kw[key])
        if "levels" in kw:
            kw["levels"] = parse_levels(kw["levels"])
        return cls(**kw)

    def make_case(self, delta: float):
        ctor = CASES[self.case]
        return ctor(delta) if self.mu is None else ctor(delta, mu=self.mu)


def load_config(text_or_path, out: str | None = None) -> list:
    """Experiments from an INI file (or INI text)."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "T" as written
    p = Path(str(text_or_path))
    if "\n" not in str(text_or_path) and p.exists():
        parser.read(p)
    else:
        parser.read_string(str(text_or_path))
    configs = [ExperimentConfig.from_section(s, parser[s]) for s in parser.sections()]
    if out is not None:
        for c in configs:
            c.out = out
    return configs


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> int:
    """Write atomically: rows go to a partial file that is renamed at the end."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    os.replace(tmp, path)
    return len(rows)


def mesh_sequence(n: int, levels, jitter: float = 0.0, seed: int = 0):
    """Yield ``(level, mesh)`` for the requested levels of a refinement chain."""
    wanted = sorted(set(levels))
    m = generate_unit_square(n, jitter, seed)
    for level in range(wanted[-1] + 1):
        if level in wanted:
            yield level, m
        if level < wanted[-1]:
            m = refine_uniform(m, jitter, seed)


def _convergence_rows(cfg: ExperimentConfig, scheme: SchemeConfig) -> list:
    rows = {}
    for level, mesh in mesh_sequence(cfg.n, cfg.levels, cfg.jitter, cfg.seed):
        t0 = time.perf_counter()
        cases = [cfg.make_case(d) for d in cfg.deltas]
        system = assemble_system(scheme, mesh, cases[0])
        factor = factorize(system)
        for i, case in enumerate(cases):
            s = system if i == 0 else system.with_case(case)
            sol = solve_direct(s, factor)
            e = compute_errors(sol, case, level)
            if scheme.is_stokes:
                rows[i, level] = (level, case.Ra, e.velocity_error, e.pressure_error, e.divergence_error)
            else:
                rows[i, level] = (level, case.delta, e.sigma_error, e.displacement_error, e.omega_err)
        log.info("%s %s level %d: %d dofs, %.1fs", cfg.case, scheme.label, level, system.ndofs,
                 time.perf_counter() - t0)
        factor.close()
        del system, factor
    return [rows[k] for k in sorted(rows)]


def _case_stem(cfg: ExperimentConfig) -> str:
    # the file names use the long case names
    return {"example1": "rigid_body_motion", "example2": "transverse_isotropic",
            "polar2d": "polar", "stokes_noflow": "no_flow"}.get(cfg.case, cfg.case)


def run_convergence(cfg: ExperimentConfig) -> dict:
    """Write ``<case>_<scheme>.csv`` per scheme; returns ``{path: rows}``."""
    header = STOKES_HEADER if cfg.mode == "stokes" else ELASTICITY_HEADER
    out = {}
    for scheme in cfg.schemes:
        path = Path(cfg.out) / f"{_case_stem(cfg)}_{scheme.file_label}.csv"
        try:
            rows = _convergence_rows(cfg, scheme)
        except Exception:
            log.error("run %s/%s failed; no file written", cfg.case, scheme.label)
            raise
        out[path] = _write_csv(path, header, rows)
    return out


ROBUSTNESS_HEADER = ["scheme", "level", "Bnd", "invariance_defect", "kernel_violation",
                     "beta_h", "alpha_h", "c_phi"]


def run_robustness(cfg: ExperimentConfig) -> dict:
    """Write ``robustness_<case>_<scheme>.csv`` with one report per (delta, level)."""
    out = {}
    for scheme in cfg.schemes:
        rows = []
        for level, mesh in mesh_sequence(cfg.n, cfg.levels, cfg.jitter, cfg.seed):
            for d in cfg.deltas:
                try:
                    rep = robustness_report(scheme, cfg.make_case(d), mesh, level)
                except DenseLimitError:
                    rep = robustness_report(scheme, cfg.make_case(d), mesh, level, constants=False)
                rows.append((rep.scheme, level, d, rep.invariance_defect, rep.kernel_violation,
                             rep.beta_h, rep.alpha_h, rep.c_phi))
        path = Path(cfg.out) / f"robustness_{_case_stem(cfg)}_{scheme.file_label}.csv"
        out[path] = _write_csv(path, ROBUSTNESS_HEADER, rows)
    return out


def run_transient_experiment(cfg: ExperimentConfig) -> dict:
    out = {}
    mesh = generate_unit_square(cfg.n, cfg.jitter, cfg.seed)
    for scheme in cfg.schemes:
        for d in cfg.deltas:
            stem = Path(cfg.out) / f"transient_{scheme.file_label}"
            if len(cfg.deltas) > 1:
                stem = stem.with_name(f"{stem.name}_{d!r}")
            res = run_transient(scheme, d, cfg.dt, cfg.T, mesh, mu=cfg.mu or 1.0)
            for p in write_series(res, stem):
                out[p] = _count_rows(p)
    return out


def _count_rows(path: Path) -> int:
    with open(path) as fh:
        return max(sum(1 for _ in fh) - 1, 0)


def run_experiment(cfg: ExperimentConfig) -> dict:
    if cfg.mode in ("convergence", "stokes"):
        return run_convergence(cfg)
    if cfg.mode == "robustness":
        return run_robustness(cfg)
    return run_transient_experiment(cfg)


def run_all_paper_experiments(out: str | Path = "data", config=None) -> dict:
    """Run every experiment of the roster and write ``manifest.csv`` last."""
    out = Path(out)
    configs = load_config(config or ROSTER, out=str(out))
    produced, failed = {}, []
    for cfg in configs:
        try:
            produced.update(run_experiment(cfg))
        except Exception as exc:  # keep going, report in the manifest
            log.error("experiment [%s] failed: %s", cfg.name, exc)
            failed.append((cfg.name, str(exc)))
    manifest = out / "manifest.csv"
    out.mkdir(parents=True, exist_ok=True)
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "rows", "note"])
        for p in sorted(produced, key=lambda p: p.name):
            w.writerow([p.name, produced[p], ""])
        for name, why in sorted(ABSENT.items()):
            w.writerow([name, "", f"absent: {why}"])
        for name, why in failed:
            w.writerow([f"[{name}]", "", f"failed: {why}"])
    if failed:
        raise RuntimeError(f"{len(failed)} experiment(s) failed; see {manifest}")
    return produced


# -- rates -----------------------------------------------------------------------

def rate_table(path: str | Path, mu: float = 1e-4) -> str:
    """Observed rates ``log2(e_l / e_{l+1})`` per column and data scale, as markdown.

    Entries whose errors sit at the roundoff floor, ``1e3 * eps * scale``
    with ``scale = delta / mu`` (or ``Ra`` for Stokes files), are shown as
    ``floor``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        body = [r for r in reader if r]
    if header not in (ELASTICITY_HEADER, STOKES_HEADER):
        raise ValueError(f"{path}: unexpected header {header}")
    stokes = header == STOKES_HEADER
    groups = {}
    try:
        for r in body:
            if len(r) != len(header):
                raise ValueError
            vals = [float(v) if v else None for v in r[2:]]
            groups.setdefault(float(r[1]), []).append((int(r[0]), vals))
    except ValueError:
        raise ValueError(f"{path}: malformed row") from None
    cols = header[2:]
    lines = [f"| {header[1]} | levels | " + " | ".join(cols) + " |",
             "|" + "---|" * (len(cols) + 2)]
    eps = np.finfo(float).eps
    for d, rows in groups.items():
        rows.sort()
        if len(rows) < 2:
            raise ValueError(f"{path}: need at least two levels for {header[1]}={d!r}")
        floor = 1e3 * eps * (d if stokes else d / mu)
        for (l0, e0), (l1, e1) in zip(rows, rows[1:]):
            cells = []
            for a, b in zip(e0, e1):
                if a is None or b is None:
                    cells.append("")
                elif min(a, b) <= floor:
                    cells.append("floor")
                else:
                    cells.append(f"{math.log2(a / b) / (l1 - l0):.2f}")
            lines.append(f"| {d!r} | {l0}-{l1} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


# -- argument parsing ----------------------------------------------------------------

def _add_common(p, *, case=True, scheme=True, delta=True, levels=True, out="data"):
    if case:
        p.add_argument("--case", default="rigid_body_motion", help="case name")
    if scheme:
        p.add_argument("--scheme", default="jm", help="comma-separated schemes (jm, peers, afw1, sv, ht, ...)")
    if delta:
        p.add_argument("--delta", default="10,1000,100000", help="comma-separated data scales")
    if levels:
        p.add_argument("--levels", default="0-3", help="levels: 0-3, 1,2 or a maximum level")
    p.add_argument("--n", type=int, default=8, help="cells per side of the base mesh")
    p.add_argument("--jitter", type=float, default=0.2, help="vertex jitter in [0, 0.3]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=out,
                   help="file stem for gen-mesh, output directory otherwise")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symstress", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-mesh", help="write a mesh sequence as .node/.ele files")
    _add_common(p, case=False, scheme=False, delta=False, levels=False, out="meshes/unit")
    p.add_argument("--levels", default="0")

    p = sub.add_parser("converge", help="convergence study of one case")
    _add_common(p)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--config", help="INI file with experiments (overrides the other flags)")

    p = sub.add_parser("stokes", help="no-flow Stokes study")
    _add_common(p, case=False, levels=False)
    p.set_defaults(scheme="sv,ht")
    p.add_argument("--levels", default="0-4")

    p = sub.add_parser("robustness", help="invariance, kernel and stability measurements")
    _add_common(p, levels=False)
    p.set_defaults(case="transverse_isotropic", scheme="jm,peers,afw1,afw3", delta="1000", n=4)
    p.add_argument("--levels", default="0-1")

    p = sub.add_parser("transient", help="transient polar fluid")
    _add_common(p, case=False, levels=False)
    p.set_defaults(scheme="jm,afw1", delta="1000", n=20)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--T", type=float, default=1.5)

    p = sub.add_parser("all", help="produce the full data roster")
    p.add_argument("--out", default="data")
    p.add_argument("--config", help="INI file replacing the built-in roster")

    p = sub.add_parser("rates", help="observed convergence rates of a CSV file")
    p.add_argument("csv", nargs="+")
    p.add_argument("--mu", type=float, default=1e-4, help="mu used for the roundoff floor")
    return ap


def _config_from_args(args, mode) -> ExperimentConfig:
    case = {"stokes": "no_flow", "transient": "transient_polar"}.get(mode, getattr(args, "case", None))
    kw = dict(case=case, schemes=args.scheme, deltas=args.delta, n=args.n, jitter=args.jitter,
              seed=args.seed, out=args.out, mode=mode)
    if hasattr(args, "levels"):
        kw["levels"] = parse_levels(args.levels)
    for key in ("mu", "dt", "T"):
        if getattr(args, key, None) is not None:
            kw[key] = getattr(args, key)
    return ExperimentConfig(**kw)


def _report(produced: dict) -> None:
    for p, rows in produced.items():
        print(f"{p}\t{rows} rows")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "gen-mesh":
            for level, m in mesh_sequence(args.n, parse_levels(args.levels), args.jitter, args.seed):
                for p in write_mesh(m, f"{args.out}_{level}"):
                    print(p)
        elif args.verb == "converge":
            if args.config:
                for cfg in load_config(args.config):
                    _report(run_experiment(cfg))
            else:
                _report(run_convergence(_config_from_args(args, "convergence")))
        elif args.verb == "stokes":
            _report(run_convergence(_config_from_args(args, "stokes")))
        elif args.verb == "robustness":
            _report(run_robustness(_config_from_args(args, "robustness")))
        elif args.verb == "transient":
            _report(run_transient_experiment(_config_from_args(args, "transient")))
        elif args.verb == "all":
            _report(run_all_paper_experiments(args.out, args.config))
        elif args.verb == "rates":
            for path in args.csv:
                print(f"{path}\n")
                print(rate_table(path, args.mu))
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"symstress: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
