"""TOML molecule and experiment specs, builtin presets, and the spec hash.

A molecule file looks like::

    name = "glycine"
    temperature = 297.0

    [[spins]]
    label = "C1"
    species = "C13"
    shift = 7290.0
    t1 = 31.6
    t2 = 10.5
    t1_error = 0.5
    provenance = "T1 measured, sample G"

    [[j]]
    a = "C1"
    b = "C2"
    hz = 52.72

Unknown keys are rejected with the file position of the offending key.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .core import SpinSystem, nucleus
from .sequences import BUILTIN_SEQUENCES


class ConfigError(ValueError):
    pass


BUILTIN_MOLECULES = ("glycine", "glutamate", "glutamate_gd", "glutamate_gd_310")


# -- position lookup ------------------------------------------------------------------


def _locate(text: str, key: str) -> tuple[int, int]:
    """Line/column of the first assignment or table header naming ``key``."""
    pat = re.compile(rf"^(\s*)(\[+\s*)?([\w.\"]*\.)?\"?{re.escape(key)}\"?\s*(=|\]|\.)")
    for lineno, line in enumerate(text.splitlines(), 1):
        m = pat.match(line)
        if m:
            return lineno, m.end(1) + 1
    return 1, 1


def _load_toml(text: str, source: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        m = re.search(r"\(at line (\d+), column (\d+)\)", str(e))
        pos = f"{m.group(1)}:{m.group(2)}" if m else "1:1"
        msg = re.sub(r"\s*\(at line.*\)", "", str(e))
        raise ConfigError(f"{source}:{pos}: {msg}") from None


class _Reader:
    """Typed access to a parsed table with positional error messages."""

    def __init__(self, table: dict, text: str, source: str, where: str = ""):
        self.t, self.text, self.source, self.where = table, text, source, where

    def fail(self, key: str, msg: str):
        line, col = _locate(self.text, key)
        raise ConfigError(f"{self.source}:{line}:{col}: {msg}")

    def check_keys(self, allowed):
        for k in self.t:
            if k not in allowed:
                where = f" in [{self.where}]" if self.where else ""
                self.fail(k, f"unknown key {k!r}{where}")

    def get(self, key, kind, default=..., required=False):
        if key not in self.t:
            if required or default is ...:
                where = f" in [{self.where}]" if self.where else ""
                raise ConfigError(f"{self.source}:1:1: missing key {key!r}{where}")
            return default
        v = self.t[key]
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, kind) or (kind is not bool and isinstance(v, bool)):
            self.fail(key, f"{key!r} must be {kind.__name__}, got {type(v).__name__}")
        return v

    def sub(self, key) -> "_Reader":
        v = self.t.get(key, {})
        if not isinstance(v, dict):
            self.fail(key, f"{key!r} must be a table")
        return _Reader(v, self.text, self.source, f"{self.where}.{key}" if self.where else key)


# -- molecules ------------------------------------------------------------------------


@dataclass(frozen=True)
class SpinEntry:
    label: str
    species: str
    shift: float
    t1: float
    t2: float
    t1_error: float = 0.0
    provenance: str = ""


@dataclass(frozen=True)
class CouplingEntry:
    a: str
    b: str
    hz: float
    provenance: str = ""


@dataclass(frozen=True)
class MoleculeSpec:
    name: str
    spins: tuple[SpinEntry, ...]
    j: tuple[CouplingEntry, ...] = ()
    temperature: float = 297.0
    sample: str = ""
    gd_concentration: float = 0.0
    relaxivity: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self) -> dict:
        d: dict = {"name": self.name}
        if self.sample:
            d["sample"] = self.sample
        d["temperature"] = self.temperature
        if self.gd_concentration:
            d["gd_concentration"] = self.gd_concentration
        if self.notes:
            d["notes"] = self.notes
        d["spins"] = [_entry_dict(s) for s in self.spins]
        if self.j:
            d["j"] = [_entry_dict(c) for c in self.j]
        if self.relaxivity:
            d["relaxivity"] = dict(self.relaxivity)
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def semantic(self) -> dict:
        """Fields that affect simulation results (no provenance or notes)."""
        return {
            "spins": [[s.label, s.species, s.shift, s.t1, s.t2] for s in self.spins],
            "j": sorted([sorted([c.a, c.b]), c.hz] for c in self.j),
            "temperature": self.temperature,
            "relaxivity": dict(sorted(self.relaxivity.items())),
            "gd_concentration": self.gd_concentration,
        }


def _entry_dict(entry) -> dict:
    return {k: v for k, v in asdict(entry).items() if not (k in ("provenance", "t1_error") and not v)}


_MOLECULE_KEYS = {"name", "sample", "temperature", "gd_concentration", "notes", "spins", "j", "relaxivity"}


def parse_molecule(text: str, source: str = "<molecule>") -> MoleculeSpec:
    r = _Reader(_load_toml(text, source), text, source)
    r.check_keys(_MOLECULE_KEYS)
    spins = []
    raw_spins = r.get("spins", list, required=True)
    for item in raw_spins:
        if not isinstance(item, dict):
            r.fail("spins", "spins must be an array of tables")
        s = _Reader(item, text, source, "spins")
        s.check_keys({f.name for f in fields(SpinEntry)})
        spins.append(SpinEntry(
            s.get("label", str, required=True), s.get("species", str, required=True),
            s.get("shift", float, 0.0), s.get("t1", float, required=True), s.get("t2", float, required=True),
            s.get("t1_error", float, 0.0), s.get("provenance", str, ""),
        ))
    couplings = []
    for item in r.get("j", list, []):
        if not isinstance(item, dict):
            r.fail("j", "j must be an array of tables")
        c = _Reader(item, text, source, "j")
        c.check_keys({f.name for f in fields(CouplingEntry)})
        couplings.append(CouplingEntry(c.get("a", str, required=True), c.get("b", str, required=True),
                                       c.get("hz", float, required=True), c.get("provenance", str, "")))
    relax = r.sub("relaxivity")
    labels = {s.label for s in spins}
    rel = {}
    for k in relax.t:
        if k not in labels:
            relax.fail(k, f"relaxivity for unknown spin {k!r}")
        rel[k] = relax.get(k, float)
    return MoleculeSpec(
        name=r.get("name", str, required=True),
        spins=tuple(spins),
        j=tuple(couplings),
        temperature=r.get("temperature", float, 297.0),
        sample=r.get("sample", str, ""),
        gd_concentration=r.get("gd_concentration", float, 0.0),
        relaxivity=rel,
        notes=r.get("notes", str, ""),
    )


def build_spin_system(spec: MoleculeSpec, gamma_ratio: float | None = None) -> SpinSystem:
    labels = [s.label for s in spec.spins]
    n = len(labels)
    if len(set(labels)) != n:
        raise ConfigError(f"molecule {spec.name!r}: duplicate spin labels")
    j = np.zeros((n, n))
    seen: set[tuple[int, int]] = set()
    for c in spec.j:
        for lab in (c.a, c.b):
            if lab not in labels:
                raise ConfigError(f"molecule {spec.name!r}: coupling names unknown spin {lab!r}")
        i, k = labels.index(c.a), labels.index(c.b)
        if i == k:
            raise ConfigError(f"molecule {spec.name!r}: self-coupling on {c.a!r}")
        # a pair listed in both orders must agree, otherwise J(a,b) != J(b,a)
        if (i, k) in seen or (k, i) in seen:
            if j[i, k] != c.hz:
                raise ConfigError(f"molecule {spec.name!r}: J matrix not symmetric at ({c.a}, {c.b})")
            continue
        seen.add((i, k))
        j[i, k] = j[k, i] = c.hz
    return SpinSystem(
        tuple(nucleus(s.species, s.label, gamma_ratio) for s in spec.spins),
        [s.shift for s in spec.spins],
        j,
        [s.t1 for s in spec.spins],
        [s.t2 for s in spec.spins],
        spec.temperature,
        spec.name,
    )


def builtin_molecule_text(name: str) -> str:
    if name not in BUILTIN_MOLECULES:
        raise ConfigError(f"unknown builtin molecule {name!r}; choose from {', '.join(BUILTIN_MOLECULES)}")
    return resources.files("spincool.data.molecules").joinpath(f"{name}.toml").read_text()


def load_molecule(ref: str, base: Path | None = None) -> MoleculeSpec:
    """Builtin name or path to a molecule file (relative to ``base``)."""
    if ref in BUILTIN_MOLECULES:
        return parse_molecule(builtin_molecule_text(ref), f"<builtin:{ref}>")
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ConfigError(f"molecule file not found: {path}")
    return parse_molecule(path.read_text(), str(path))


# -- experiments ----------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceSection:
    name: str = ""
    file: str = ""
    params: dict = field(default_factory=dict)
    anchors: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScheduleSection:
    text: str
    rounds: int = 1


@dataclass(frozen=True)
class Outputs:
    report: bool = True
    spectra: tuple[str, ...] = ()
    trajectory: bool = True


@dataclass(frozen=True)
class Overrides:
    gd_concentration: float | None = None
    gamma_ratio: float | None = None
    step: float | None = None
    relaxation: bool = True


@dataclass(frozen=True)
class ExperimentSpec:
    molecule: str
    sequence: SequenceSection | None = None
    schedule: ScheduleSection | None = None
    outputs: Outputs = Outputs()
    overrides: Overrides = Overrides()
    grid: dict = field(default_factory=dict)
    name: str = ""
    source: str = ""

    def to_dict(self) -> dict:
        d: dict = {}
        if self.name:
            d["name"] = self.name
        d["molecule"] = self.molecule
        if self.sequence is not None:
            s: dict = {}
            if self.sequence.name:
                s["name"] = self.sequence.name
            if self.sequence.file:
                s["file"] = self.sequence.file
            if self.sequence.params:
                s["params"] = dict(self.sequence.params)
            if self.sequence.anchors:
                s["anchors"] = {k: dict(v) for k, v in self.sequence.anchors.items()}
            d["sequence"] = s
        if self.schedule is not None:
            d["schedule"] = {"text": self.schedule.text, "rounds": self.schedule.rounds}
        d["outputs"] = {"report": self.outputs.report, "spectra": list(self.outputs.spectra),
                        "trajectory": self.outputs.trajectory}
        o = {k: v for k, v in asdict(self.overrides).items() if v is not None}
        d["overrides"] = o
        if self.grid:
            d["grid"] = {k: list(v) for k, v in self.grid.items()}
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


_EXPERIMENT_KEYS = {"name", "molecule", "sequence", "schedule", "outputs", "overrides", "grid"}


def parse_experiment(text: str, source: str = "<experiment>") -> ExperimentSpec:
    r = _Reader(_load_toml(text, source), text, source)
    r.check_keys(_EXPERIMENT_KEYS)
    seq = sched = None
    if "sequence" in r.t:
        s = r.sub("sequence")
        s.check_keys({"name", "file", "params", "anchors"})
        name, file = s.get("name", str, ""), s.get("file", str, "")
        if bool(name) == bool(file):
            s.fail("name" if name else "sequence", "sequence needs exactly one of 'name' or 'file'")
        if name and name not in BUILTIN_SEQUENCES:
            s.fail("name", f"unknown sequence {name!r}; choose from {', '.join(BUILTIN_SEQUENCES)}")
        p = s.sub("params")
        params = {}
        for k, v in p.t.items():
            if isinstance(v, bool) or not isinstance(v, (int, float, str)):
                p.fail(k, f"parameter {k!r} must be a number or string")
            params[k] = float(v) if isinstance(v, int) else v
        a = s.sub("anchors")
        anchors = {}
        for mark in a.t:
            m = a.sub(mark)
            anchors[mark] = {lab: m.get(lab, float) for lab in m.t}
        seq = SequenceSection(name, file, params, anchors)
    if "schedule" in r.t:
        s = r.sub("schedule")
        s.check_keys({"text", "rounds"})
        sched = ScheduleSection(s.get("text", str, required=True), s.get("rounds", int, 1))
    if (seq is None) == (sched is None):
        raise ConfigError(f"{source}:1:1: experiment needs exactly one of [sequence] or [schedule]")
    o = r.sub("outputs")
    o.check_keys({"report", "spectra", "trajectory"})
    spectra = o.get("spectra", list, [])
    if not all(isinstance(x, str) for x in spectra):
        o.fail("spectra", "spectra must be a list of species names")
    outputs = Outputs(o.get("report", bool, True), tuple(spectra), o.get("trajectory", bool, True))
    v = r.sub("overrides")
    v.check_keys({f.name for f in fields(Overrides)})
    overrides = Overrides(v.get("gd_concentration", float, None), v.get("gamma_ratio", float, None),
                          v.get("step", float, None), v.get("relaxation", bool, True))
    g = r.sub("grid")
    grid = {}
    for k, vals in g.t.items():
        if not isinstance(vals, list) or not vals or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in vals):
            g.fail(k, f"grid axis {k!r} must be a non-empty list of numbers")
        grid[k] = tuple(float(x) for x in vals)
    return ExperimentSpec(r.get("molecule", str, required=True), seq, sched, outputs, overrides, grid,
                          r.get("name", str, ""), source)


def load_experiment(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"experiment file not found: {path}")
    return parse_experiment(path.read_text(), str(path))


def spec_hash(resolved: dict) -> str:
    """sha256 over the canonical JSON of a fully resolved experiment."""
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()
