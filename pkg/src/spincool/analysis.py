"""Relaxation fits, enhancement reports, Gd relaxivity and stick spectra."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .core import (
    SpinState,
    SpinSystem,
    polarizations,
    thermal_state,
)
from .cooling import RatioTable, shannon_bound_check, spin_temperature, t1_ratio
from .dynamics import Pulse, apply_pulse


class FitError(ValueError):
    pass


# -- T1 fitting -------------------------------------------------------------------


@dataclass(frozen=True)
class T1Fit:
    t1: float
    amplitude: float
    equilibrium: float
    residual: float
    converged: bool
    iterations: int


def ir_model(tau, t1, amplitude, equilibrium):
    return equilibrium * (1 - 2 * amplitude * np.exp(-np.asarray(tau) / t1))


def fit_t1(curve: Sequence[tuple[float, float]], max_iter: int = 200, xtol: float = 1e-10) -> T1Fit:
    """Fit eps(tau) = eps_inf (1 - 2 A exp(-tau/T1)) by Levenberg-Marquardt.

    Starts from T1 = tau at the sign change (median tau without one), A = 1
    and eps_inf = the value at the longest tau. ``residual`` is the RMS misfit.
    """
    pts = sorted((float(t), float(e)) for t, e in curve)
    if len(pts) < 3:
        raise FitError(f"need at least 3 points, got {len(pts)}")
    tau = np.array([p[0] for p in pts])
    eps = np.array([p[1] for p in pts])
    if len(np.unique(tau)) != len(tau):
        raise FitError("tau values must be distinct")
    if np.ptp(eps) <= 1e-12 * max(1.0, np.max(np.abs(eps))):
        raise FitError("degenerate curve: signal does not change with tau")

    flips = np.nonzero(np.diff(np.sign(eps)) != 0)[0]
    t1_0 = tau[flips[0] + 1] if flips.size else float(np.median(tau))
    x0 = np.array([t1_0, 1.0, eps[-1] if eps[-1] != 0 else np.max(np.abs(eps))])

    def resid(p):
        return ir_model(tau, *p) - eps

    def jac(p):
        t1, a, e = p
        ex = np.exp(-tau / t1)
        return np.column_stack([
            -2 * e * a * ex * tau / t1**2,
            -2 * e * ex,
            1 - 2 * a * ex,
        ])

    # max_nfev counts model evaluations; with an analytic Jacobian that is
    # at least one per LM iteration.
    # trial steps may probe T1 < 0, where the exponential overflows; LM rejects those
    with np.errstate(over="ignore", invalid="ignore"):
        sol = least_squares(resid, x0, jac=jac, method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15,
                            max_nfev=max_iter * (len(x0) + 1))
    t1, a, e = sol.x
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    converged = sol.status > 0 and t1 > 0
    return T1Fit(float(t1), float(a), float(e), rms, bool(converged), int(sol.nfev))


# -- enhancement and reports ---------------------------------------------------------


def enhancement_factors(state: SpinState, system: SpinSystem) -> np.ndarray:
    """Per-spin polarization relative to thermal equilibrium."""
    return polarizations(state) / polarizations(thermal_state(system))


@dataclass
class CoolingReport:
    labels: list
    factors: np.ndarray
    entropy_before: float
    entropy_after: float
    spin_temperatures: np.ndarray
    bypassed_shannon: bool
    deficit_before: float = 0.0
    deficit_after: float = 0.0
    trajectory: list | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.factors)):
            raise ValueError("non-finite enhancement factor")

    def factor(self, label: str) -> float:
        return float(self.factors[self.labels.index(label)])

    @property
    def entropy_change(self) -> float:
        return self.entropy_after - self.entropy_before


def cooling_report(after: SpinState, system: SpinSystem, before: SpinState | None = None,
                   trajectory: list | None = None, metadata: dict | None = None,
                   eps0: float = 1e-5) -> CoolingReport:
    before = thermal_state(system) if before is None else before
    factors = enhancement_factors(after, system)
    check = shannon_bound_check(before, after, system, eps0=eps0)
    with np.errstate(divide="ignore"):
        temps = np.array([spin_temperature(f, system.temperature) if f > 0 else math.inf for f in factors])
    traj = None
    if trajectory is not None:
        eq = polarizations(thermal_state(system))
        traj = [np.asarray(p) / eq for p in trajectory]
    return CoolingReport(system.labels, factors, check.entropy_before, check.entropy_after, temps,
                         check.bypassed, check.deficit_before, check.deficit_after, traj,
                         dict(metadata or {}))


def report_csv(report: CoolingReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["spin", "factor", "temperature_K"])
    for lab, f, t in zip(report.labels, report.factors, report.spin_temperatures):
        w.writerow([lab, repr(float(f)), repr(float(t))])
    return buf.getvalue()


def report_text(report: CoolingReport, extra: dict | None = None) -> str:
    items = dict(extra or {})
    items.update({
        "entropy_proxy_before": report.entropy_before,
        "entropy_proxy_after": report.entropy_after,
        "entropy_proxy_change": report.entropy_change,
        "vn_deficit_before": report.deficit_before,
        "vn_deficit_after": report.deficit_after,
        "bypassed_shannon": report.bypassed_shannon,
    })
    for lab, f in zip(report.labels, report.factors):
        items[f"factor.{lab}"] = float(f)
    items.update({f"meta.{k}": v for k, v in report.metadata.items()})
    lines = []
    for k, v in items.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def trajectory_csv(labels: Sequence[str], rows: Sequence[tuple[str, np.ndarray]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", *labels])
    for name, vals in rows:
        w.writerow([name, *(repr(float(v)) for v in vals)])
    return buf.getvalue()


# -- relaxivity -----------------------------------------------------------------------


@dataclass(frozen=True)
class RelaxivityModel:
    """Per-spin relaxivity (1/(s mM)) and the T1 at zero agent concentration."""

    r1: dict
    base_t1: dict

    def __post_init__(self):
        if any(v < 0 for v in self.r1.values()):
            raise ValueError("relaxivity must be >= 0")
        if set(self.r1) != set(self.base_t1):
            raise ValueError("r1 and base_t1 must cover the same spins")

    def t1_at(self, label: str, concentration: float) -> float:
        return 1.0 / (1.0 / self.base_t1[label] + self.r1[label] * concentration)


def fit_relaxivity(t1_without: dict, t1_with: dict, concentration: float) -> RelaxivityModel:
    """Two-point relaxivity: r1 = (1/T1_with - 1/T1_without) / c."""
    if not concentration > 0:
        raise ValueError("concentration must be positive")
    r1 = {k: max(0.0, (1 / t1_with[k] - 1 / t1_without[k]) / concentration) for k in t1_without}
    return RelaxivityModel(r1, dict(t1_without))


def apply_relaxivity(system: SpinSystem, model: RelaxivityModel, concentration: float) -> SpinSystem:
    """System with agent-shortened T1; T2 is scaled by the same ratio as T1."""
    if concentration < 0:
        raise ValueError("concentration must be >= 0")
    if concentration == 0:
        return system
    t1 = np.array(system.t1, dtype=float)
    for lab in model.r1:
        t1[system.index(lab)] = model.t1_at(lab, concentration)
    scale = t1 / system.t1
    return system.replace(t1=t1, t2=system.t2 * scale)


def ratio_table(system: SpinSystem, reset: str) -> RatioTable:
    """R(c, reset) for every spin of a different species than the reset spin."""
    r = system.index(reset)
    entries = {}
    for i, lab in enumerate(system.labels):
        if i != r and system.species[i] != system.species[r]:
            entries[(lab, reset)] = t1_ratio(float(system.t1[i]), float(system.t1[r]))
    return RatioTable(entries)


# -- stick spectra ----------------------------------------------------------------------


def read_pulse(species: str) -> Pulse:
    """90 degree y read pulse: I_z -> I_x."""
    return Pulse(f"@{species}", 90, 90)


def multiplet(state: SpinState, system: SpinSystem, label: str, decouple: str | None = None,
              pulsed: bool = False, tol: float = 1e-12) -> list[tuple[float, float]]:
    """First-order lines of one spin after the read pulse.

    ``pulsed=True`` means the read pulse was already applied. Amplitudes are
    the real (absorptive) part of the single-quantum coherence of the spin,
    normalized so the multiplet sums to the pre-pulse polarization.
    """
    n = system.n
    i = system.index(label)
    if not pulsed:
        state = apply_pulse(state, system, read_pulse(system.species[i]))
    rho = state.deviation.reshape((2,) * (2 * n))
    sl = [slice(None)] * (2 * n)
    sl[i], sl[n + i] = 0, 1
    others = [k for k in range(n) if k != i]
    # single-quantum on spin i with every other spin unchanged
    block = rho[tuple(sl)].reshape(2 ** (n - 1), 2 ** (n - 1))
    coh = np.diag(block)
    amps = 2 * np.real(coh) / 2 ** (n - 1)
    jrow = np.array([system.j_couplings[i, k] for k in others], dtype=float)
    if decouple is not None:
        jrow = np.where([system.species[k] == decouple for k in others], 0.0, jrow)
    cfg = np.arange(2 ** (n - 1))
    bits = (cfg[:, None] >> (n - 2 - np.arange(n - 1))[None, :]) & 1 if n > 1 else np.zeros((1, 0), int)
    freqs = system.shifts[i] + (0.5 - bits) @ jrow
    lines: dict[float, float] = {}
    for f, a in zip(freqs, amps):
        key = round(float(f), 9)
        lines[key] = lines.get(key, 0.0) + float(a)
    return sorted((f, a) for f, a in lines.items() if abs(a) > tol)


def stick_spectrum(state: SpinState, system: SpinSystem, species: str, decouple: str | None = None,
                   tol: float = 1e-12) -> list[tuple[float, float]]:
    """Line list (Hz, amplitude) of every spin of ``species`` after a 90 degree read."""
    idx = system.indices_of_species(species)
    if not idx:
        raise ValueError(f"no spins of species {species!r}")
    pulsed = apply_pulse(state, system, read_pulse(species))
    lines: dict[float, float] = {}
    for i in idx:
        for f, a in multiplet(pulsed, system, system.labels[i], decouple, pulsed=True, tol=0.0):
            lines[f] = lines.get(f, 0.0) + a
    return sorted((f, a) for f, a in lines.items() if abs(a) > tol)


def spectrum_csv(lines: Sequence[tuple[float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frequency_Hz", "amplitude"])
    for f, a in lines:
        w.writerow([repr(float(f)), repr(float(a))])
    return buf.getvalue()


__all__ = [
    "T1Fit",
    "fit_t1",
    "ir_model",
    "enhancement_factors",
    "CoolingReport",
    "cooling_report",
    "RelaxivityModel",
    "fit_relaxivity",
    "apply_relaxivity",
    "ratio_table",
    "stick_spectrum",
    "multiplet",
]
