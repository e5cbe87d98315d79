"""Command line: run experiments, fit recovery curves, scan d7, list presets."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import sys
from io import StringIO
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, config
from .analysis import FitError, RelaxivityModel, apply_relaxivity, cooling_report
from .config import ConfigError, ExperimentSpec
from .cooling import CoolingError, parse_schedule, run_schedule
from .core import SpinState, SpinSystem, SpinSystemError, polarizations, spin_operator, thermal_state
from .seqfile import format_sequence, parse_sequence
from .sequences import (
    DelayPlan,
    SequenceError,
    SequenceProgram,
    compute_delays,
    execute,
    hcc_relay,
    hcc_wait,
    inversion_recovery,
    optimize_d7,
    plan_for,
    potent,
    refocused_inept,
)

_NUMERIC_PARAMS = {"t", "j_ch", "j_cc", "k", "d2", "d3", "d7", "tau_count", "tau_min", "tau_max", "noise"}
_TEXT_PARAMS = {"source", "target", "spin"}


# -- resolution ---------------------------------------------------------------------


@dataclasses.dataclass
class Resolved:
    spec: ExperimentSpec
    molecule: config.MoleculeSpec
    system: SpinSystem
    program: SequenceProgram | None
    metadata: dict
    method: str
    step: float | None
    seed: int

    def hash_payload(self) -> dict:
        d = self.spec.to_dict()
        d.pop("name", None)
        d.pop("grid", None)
        d["overrides"].pop("step", None)
        payload = {"molecule": self.molecule.semantic(), "experiment": d, "step": self.step}
        if self.program is not None:
            payload["program"] = format_sequence(self.program)
        if self.spec.sequence is not None and self.spec.sequence.params.get("noise"):
            payload["seed"] = self.seed
        return payload

    @property
    def hash(self) -> str:
        return config.spec_hash(self.hash_payload())


def _system_for(spec: ExperimentSpec, mol: config.MoleculeSpec) -> tuple[SpinSystem, dict]:
    system = config.build_spin_system(mol, spec.overrides.gamma_ratio)
    meta: dict = {"molecule": mol.name}
    if mol.sample:
        meta["sample"] = mol.sample
    c = spec.overrides.gd_concentration
    if c is not None and c != mol.gd_concentration:
        if not mol.relaxivity:
            raise ConfigError(f"molecule {mol.name!r} has no relaxivity data for a Gd override")
        extra = c - mol.gd_concentration
        if extra < 0:
            raise ConfigError(f"Gd concentration {c} mM below the molecule's own {mol.gd_concentration} mM")
        base = {lab: float(system.t1[system.index(lab)]) for lab in mol.relaxivity}
        system = apply_relaxivity(system, RelaxivityModel(dict(mol.relaxivity), base), extra)
        meta.update({"gd_concentration_mM": c, "t1_derived_from_relaxivity": True,
                     "t2_scaling": "assumed equal to T1 scaling"})
    return system, meta


def _plan(system: SpinSystem, params: dict) -> DelayPlan:
    t = params.get("t", 1e-3)
    plan = plan_for(system, t=t, source=params.get("source", "@H1"), target=params.get("target", "C2"))
    if any(k in params for k in ("j_ch", "j_cc", "k")):
        plan = compute_delays(params.get("j_ch", plan.j_ch), params.get("j_cc", plan.j_cc),
                              int(params.get("k", plan.k)), t)
    if "d7" in params:
        plan = dataclasses.replace(plan, d7=params["d7"])
    return plan


def _require(params: dict, *names):
    for n in names:
        if n not in params:
            raise ConfigError(f"sequence parameter {n!r} is required")


def build_program(spec: ExperimentSpec, system: SpinSystem, base: Path) -> SequenceProgram | None:
    sec = spec.sequence
    params = dict(sec.params)
    if sec.file:
        path = base / sec.file
        if not path.is_file():
            raise ConfigError(f"sequence file not found: {path}")
        prog = parse_sequence(path.read_text(), str(path))
        bad = [k for k, v in params.items() if isinstance(v, str)]
        if bad:
            raise ConfigError(f"sequence file parameters must be numbers: {bad}")
        return prog.bind(**params)
    for k, v in params.items():
        if k in _NUMERIC_PARAMS and isinstance(v, str):
            raise ConfigError(f"sequence parameter {k!r} must be a number")
        if k in _TEXT_PARAMS and not isinstance(v, str):
            raise ConfigError(f"sequence parameter {k!r} must be a string")
        if k not in _NUMERIC_PARAMS | _TEXT_PARAMS:
            raise ConfigError(f"unknown sequence parameter {k!r}")
    name = sec.name
    if name == "inversion_recovery":
        _require(params, "spin")
        return None
    plan = _plan(system, params)
    if name == "inept":
        return refocused_inept(system, params.get("source", "@H1"), params.get("target", "C2"), plan)
    if name == "hcc":
        return hcc_relay(system, plan)
    if name == "hcc_wait":
        _require(params, "d3")
        return hcc_wait(system, plan, params["d3"])
    _require(params, "d2", "d3")
    return potent(system, plan, params["d2"], params["d3"], plus_variant=name == "potent_plus")


def resolve(spec: ExperimentSpec, step: float | None = None, seed: int = 0) -> Resolved:
    base = Path(spec.source).parent if spec.source else Path(".")
    mol = config.load_molecule(spec.molecule, base)
    system, meta = _system_for(spec, mol)
    step = step if step is not None else spec.overrides.step
    if step is not None and not step > 0:
        raise ConfigError("integrator step must be positive")
    program = build_program(spec, system, base) if spec.sequence is not None else None
    if program is not None:
        missing = program.unbound()
        if missing:
            raise ConfigError(f"unbound sequence parameters: {sorted(missing)}")
    return Resolved(spec, mol, system, program, meta, "strang" if step else "exact", step, seed)


# -- execution ----------------------------------------------------------------------


def _anchor(system: SpinSystem, anchors: dict):
    def at_mark(name: str, state: SpinState) -> SpinState:
        if name not in anchors:
            return state
        eq = polarizations(thermal_state(system))
        now = polarizations(state)
        dev = np.array(state.deviation)
        for lab, factor in anchors[name].items():
            i = system.index(lab)
            dev = dev + (factor * eq[i] - now[i]) * spin_operator("z", i, system.n)
        return SpinState(dev, state.epsilon_ref)

    return at_mark


def _csv_rows(header, rows) -> str:
    buf = StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def run_resolved(res: Resolved) -> tuple[analysis.CoolingReport, dict[str, str]]:
    """Execute and return the report plus the text of every output file."""
    spec, system = res.spec, res.system
    eq = polarizations(thermal_state(system))
    run_kw = dict(method=res.method, step=res.step, relaxation=spec.overrides.relaxation)
    meta = dict(res.metadata)
    extra: dict = {}
    files: dict[str, str] = {}
    traj_rows: list = []
    if spec.schedule is not None:
        schedule = parse_schedule(spec.schedule.text)
        out = run_schedule(system, schedule, spec.schedule.rounds, **run_kw)
        final = out.final
        traj_rows = [(f"round_{i}", p / eq) for i, p in enumerate(out.trajectory)]
        meta["rounds"] = spec.schedule.rounds
    elif res.program is None:
        p = spec.sequence.params
        curve = inversion_recovery(system, p["spin"], int(p.get("tau_count", 17)), p.get("tau_min"),
                                   p.get("tau_max"))
        noise = float(p.get("noise", 0.0))
        if noise:
            rng = np.random.default_rng(res.seed)
            i = system.index(p["spin"])
            curve = [(t, e + noise * eq[i] * rng.standard_normal()) for t, e in curve]
        fit = analysis.fit_t1(curve)
        extra.update({"fit.spin": p["spin"], "fit.t1": fit.t1, "fit.amplitude": fit.amplitude,
                      "fit.equilibrium": fit.equilibrium, "fit.residual": fit.residual,
                      "fit.converged": fit.converged})
        files["curve.csv"] = _csv_rows(["tau_s", "polarization"], curve)
        final = thermal_state(system)
    else:
        anchors = spec.sequence.anchors
        ex = execute(res.program, system, **run_kw, at_mark=_anchor(system, anchors) if anchors else None)
        final = ex.state
        traj_rows = [("start", np.ones(system.n))]
        traj_rows += [(name, polarizations(st) / eq) for name, st in ex.marks.items()]
        traj_rows.append(("end", polarizations(final) / eq))
        if anchors:
            meta["anchors"] = "; ".join(f"{m}: " + ", ".join(f"{k}={v!r}" for k, v in a.items())
                                        for m, a in anchors.items())
    report = cooling_report(final, system, metadata=meta)
    h = res.hash
    stamp = f"# spec_hash = {h}\n"
    if spec.outputs.report:
        files["report.csv"] = stamp + analysis.report_csv(report)
        files["report.txt"] = analysis.report_text(report, {"spec_hash": h, **extra})
    for species in spec.outputs.spectra:
        lines = analysis.stick_spectrum(final, system, species)
        files[f"spectrum_{species}.csv"] = stamp + analysis.spectrum_csv(lines)
    if spec.outputs.trajectory and traj_rows:
        files["trajectory.csv"] = stamp + analysis.trajectory_csv(system.labels, traj_rows)
    if "curve.csv" in files:
        files["curve.csv"] = stamp + files["curve.csv"]
    return report, files


def grid_points(spec: ExperimentSpec) -> list[dict]:
    if not spec.grid:
        return [{}]
    axes = sorted(spec.grid)
    return [dict(zip(axes, combo)) for combo in itertools.product(*(spec.grid[a] for a in axes))]


def _with_params(spec: ExperimentSpec, point: dict) -> ExperimentSpec:
    if not point:
        return spec
    if spec.sequence is None:
        raise ConfigError("grid axes apply to sequence parameters only")
    seq = dataclasses.replace(spec.sequence, params={**spec.sequence.params, **point})
    return dataclasses.replace(spec, sequence=seq, grid={})


def _write(out: Path, files: dict[str, str]):
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)


def _run_point(args):
    spec, point, step, seed, out = args
    res = resolve(_with_params(spec, point), step, seed)
    report, files = run_resolved(res)
    if out is not None:
        _write(Path(out), files)
    return res.hash, report


def run_experiment(spec: ExperimentSpec, out: Path | None = None, step: float | None = None,
                   seed: int = 0, jobs: int = 1):
    """Run every grid point; returns a list of (point, spec_hash, report)."""
    points = grid_points(spec)
    if jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    dirs = [None if out is None else (Path(out) if len(points) == 1 else Path(out) / f"point_{i:03d}")
            for i in range(len(points))]
    tasks = [(spec, p, step, seed, d) for p, d in zip(points, dirs)]
    if jobs == 1 or len(tasks) == 1:
        results = [_run_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, tasks))
    if out is not None and len(points) > 1:
        axes = sorted(spec.grid)
        rows = [(f"point_{i:03d}", *(p[a] for a in axes), h) for i, (p, (h, _)) in enumerate(zip(points, results))]
        _write(Path(out), {"grid.csv": _csv_rows(["point", *axes, "spec_hash"], rows)})
    return [(p, h, r) for p, (h, r) in zip(points, results)]


# -- subcommands --------------------------------------------------------------------


def read_curve(path: Path) -> list[tuple[float, float]]:
    if not path.is_file():
        raise ConfigError(f"curve file not found: {path}")
    pts = []
    seen_row = False
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if seen_row:  # only the first row may be a header
                    raise ConfigError(f"{path}:{lineno}:1: expected two numeric columns") from None
            seen_row = True
    return pts


def cmd_run(args) -> int:
    spec = config.load_experiment(args.spec)
    results = run_experiment(spec, Path(args.out) if args.out else None, args.step, args.seed, args.jobs)
    for point, h, report in results:
        label = " ".join(f"{k}={v!r}" for k, v in point.items())
        print(f"spec_hash = {h}" + (f"  [{label}]" if label else ""))
        for lab, f in zip(report.labels, report.factors):
            print(f"  {lab}: factor {f:.4f}")
        print(f"  bypassed_shannon = {str(report.bypassed_shannon).lower()}")
    return 0


def cmd_fit(args) -> int:
    fit = analysis.fit_t1(read_curve(Path(args.curve)), max_iter=args.max_iter)
    for k, v in dataclasses.asdict(fit).items():
        print(f"{k} = {str(v).lower() if isinstance(v, bool) else repr(v)}")
    return 0 if fit.converged else 3


def cmd_scan_d7(args) -> int:
    spec = config.load_experiment(args.spec)
    if spec.sequence is None or spec.sequence.file:
        raise ConfigError("scan-d7 needs an experiment with a builtin relay sequence")
    res = resolve(spec, args.step, args.seed)
    plan = _plan(res.system, {k: v for k, v in spec.sequence.params.items() if k != "d7"})
    d7 = optimize_d7(res.system, plan, args.halfwidth, args.grid_step, relaxation=spec.overrides.relaxation)
    text = (f"spec_hash = {res.hash}\nj_cc_nominal = {plan.j_cc!r}\nd7_nominal = {plan.d7!r}\n"
            f"d7_best = {d7!r}\nj_cc_best = {1 / (4 * d7)!r}\n")
    print(text, end="")
    if args.out:
        _write(Path(args.out), {"scan_d7.txt": text})
    return 0


def cmd_list(args) -> int:
    print("molecules:")
    for name in config.BUILTIN_MOLECULES:
        mol = config.load_molecule(name)
        print(f"  {name}  sample={mol.sample}  T={mol.temperature:g}K  spins={len(mol.spins)}")
    if args.library:
        lib = Path(args.library)
        if not lib.is_dir():
            raise ConfigError(f"library directory not found: {lib}")
        for path in sorted(lib.glob("*.toml")):
            mol = config.load_molecule(str(path))
            print(f"  {path.stem}  (user)  T={mol.temperature:g}K  spins={len(mol.spins)}")
    print("sequences:")
    for name in config.BUILTIN_SEQUENCES:
        print(f"  {name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spincool", description="Heat-bath cooling simulator for 13C-labelled spin systems.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment spec")
    r.add_argument("spec")
    r.add_argument("--out", help="output directory")
    r.add_argument("--step", type=float, help="force the split integrator with this step (s)")
    r.add_argument("--seed", type=int, default=0, help="seed for simulated measurement noise")
    r.add_argument("--jobs", type=int, default=1, help="parallel workers for grid points")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fit", help="fit an inversion-recovery curve (CSV: tau, eps)")
    f.add_argument("curve")
    f.add_argument("--max-iter", type=int, default=200)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("scan-d7", help="optimize the C-C transfer delay on a J grid")
    s.add_argument("spec")
    s.add_argument("--halfwidth", type=float, default=1.0, help="J search half-width (Hz)")
    s.add_argument("--grid-step", type=float, default=0.01, help="J grid step (Hz)")
    s.add_argument("--out")
    s.add_argument("--step", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scan_d7)

    ls = sub.add_parser("list", help="list builtin molecules and sequences")
    ls.add_argument("--library", help="directory of extra molecule files")
    ls.set_defaults(func=cmd_list)
    return p


_EXPECTED = (ConfigError, SequenceError, CoolingError, SpinSystemError, FitError, ValueError, KeyError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _EXPECTED as e:
        msg = str(e.args[0]) if isinstance(e, KeyError) and e.args else str(e)
        print(f"spincool: error: {type(e).__name__}: {' '.join(msg.split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
