"""Pulses, free evolution and relaxation of deviation density matrices.

Rotation convention: a pulse of angle theta and phase phi applies
U = exp(-i theta (cos(phi) I_x + sin(phi) I_y)) and rho -> U rho U^dagger.
With this convention a 90 degree x pulse takes I_z to -I_y, and the weak
coupling term 2 pi J I_z S_z takes 2 I_x S_z to
2 I_x S_z cos(pi J t) + I_y sin(pi J t).

Relaxation model: every spin relaxes through its own channel. A product
operator decays at the sum of 1/T2 over its transverse factors plus 1/T1
over its I_z factors; the single-spin I_z terms additionally recover toward
their thermal values. Multi-spin feed terms of order epsilon^2 are dropped
(high-temperature limit).

Two routes evolve a delay:

* ``"exact"`` - closed-form propagator. The free Hamiltonian is diagonal in
  the product basis, so for a fixed pattern of transverse spins the
  generator factorizes into 2x2 blocks, one per longitudinal spin.
* ``"strang"`` - Strang splitting of exact coherent steps and exact
  relaxation steps with step h <= min(T2)/100 and h <= 1/(100 max|J|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import SpinState, SpinSystem, _z_diagonal, resolve_targets, spin_operator

DEFAULT_SELECTIVE_DURATION = 1e-3


@dataclass(frozen=True)
class Pulse:
    """Instantaneous rotation of the selected spins.

    Angles are kept in degrees so that sequence files round-trip bit-exactly;
    ``angle`` and ``phase`` give radians.
    """

    targets: str
    angle_deg: float
    phase_deg: float = 0.0
    selective: bool = False
    nominal_duration: float = 0.0

    def __post_init__(self):
        if not self.targets.strip():
            raise ValueError("pulse needs a non-empty target selector")
        if self.nominal_duration < 0:
            raise ValueError("nominal_duration must be >= 0")
        if not self.selective and self.nominal_duration != 0:
            raise ValueError("hard pulses have zero duration")

    @property
    def angle(self) -> float:
        return math.radians(self.angle_deg)

    @property
    def phase(self) -> float:
        return math.radians(self.phase_deg)


@dataclass(frozen=True)
class Delay:
    """Free evolution. ``duration`` is seconds or the name of a program parameter."""

    duration: float | str
    decouple: str | None = None
    relaxation: bool = True

    def __post_init__(self):
        if not isinstance(self.duration, str) and not self.duration >= 0:
            raise ValueError(f"delay duration must be >= 0, got {self.duration}")


def _effective_j(system: SpinSystem, decoupled: str | None) -> np.ndarray:
    j = np.array(system.j_couplings, dtype=float)
    if decoupled is not None:
        sp = np.array([s == decoupled for s in system.species])
        hetero = sp[:, None] ^ sp[None, :]
        j[hetero] = 0.0
    return j


def free_hamiltonian(system: SpinSystem, decoupled: str | None = None) -> np.ndarray:
    """Weak-coupling rotating-frame Hamiltonian in rad/s (diagonal)."""
    m = _z_diagonal(system.n)
    j = _effective_j(system, decoupled)
    energy = 2 * np.pi * (system.shifts @ m)
    energy += 2 * np.pi * np.einsum("kl,ka,la->a", np.triu(j, 1), m, m)
    return np.diag(energy).astype(complex)


def _rotation(theta: float, phi: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [[c, -1j * s * complex(math.cos(phi), -math.sin(phi))],
         [-1j * s * complex(math.cos(phi), math.sin(phi)), c]]
    )


def pulse_unitary(system: SpinSystem, pulse: Pulse) -> np.ndarray:
    idx = set(resolve_targets(system, pulse.targets))
    rot = _rotation(pulse.angle, pulse.phase)
    u = np.ones((1, 1), dtype=complex)
    for k in range(system.n):
        u = np.kron(u, rot if k in idx else np.eye(2))
    return u


def apply_pulse(state: SpinState, system: SpinSystem, pulse: Pulse) -> SpinState:
    """Ideal instantaneous rotation; ``nominal_duration`` is not evolved."""
    u = pulse_unitary(system, pulse)
    return SpinState(u @ state.deviation @ u.conj().T, state.epsilon_ref)


@lru_cache(maxsize=None)
def _mdiff(n: int) -> np.ndarray:
    """m_l(a) - m_l(b) for every spin l and element (a, b); shape (n, d, d)."""
    m = _z_diagonal(n)
    out = m[:, :, None] - m[:, None, :]
    out.setflags(write=False)
    return out


def _pair_views(x: np.ndarray, k: int, n: int):
    """Views of elements with a_k = b_k = 0 and a_k = b_k = 1."""
    t = x.reshape((2,) * (2 * n))
    s0 = [slice(None)] * (2 * n)
    s1 = [slice(None)] * (2 * n)
    s0[k] = s0[n + k] = 0
    s1[k] = s1[n + k] = 1
    return t, tuple(s0), tuple(s1)


def _drive(system: SpinSystem, duration: float) -> np.ndarray:
    """Thermal recovery feed sum_k eps_eq (1 - exp(-t/T1)) I_z^(k)."""
    m = _z_diagonal(system.n)
    gain = system.gammas * -np.expm1(-duration / system.t1)
    return np.diag(gain @ m).astype(complex)


def step_bound(system: SpinSystem, decoupled: str | None = None) -> float:
    """Largest Strang step allowed for this system."""
    h = float(np.min(system.t2)) / 100
    jmax = float(np.max(np.abs(_effective_j(system, decoupled))))
    if jmax > 0:
        h = min(h, 1.0 / (100 * jmax))
    return h


def _evolve_exact(dev: np.ndarray, system: SpinSystem, t: float, decoupled, relax: bool):
    n = system.n
    md = _mdiff(n)
    j = _effective_j(system, decoupled)
    r1 = 1.0 / system.t1 if relax else np.zeros(n)
    r2 = 1.0 / system.t2 if relax else np.zeros(n)
    scalar = -1j * 2 * np.pi * np.einsum("l,lab->ab", system.shifts, md)
    scalar -= np.einsum("l,lab->ab", r2, np.abs(md))
    out = dev * np.exp(scalar * t)
    for k in range(n):
        w = 2 * np.pi * np.einsum("l,lab->ab", j[k], md)
        t_out, s0, s1 = _pair_views(out, k, n)
        wk = w.reshape((2,) * (2 * n))[s0]
        r = r1[k]
        mu = np.sqrt((r * r - wk * wk).astype(complex)) / 2
        eb = np.exp((-mu - r / 2) * t)
        em1 = np.expm1(2 * mu * t)
        small = np.abs(mu * t) < 1e-12
        safe_mu = np.where(small, 1.0, mu)
        e_s = np.where(small, t * np.exp(-r * t / 2), eb * em1 / (2 * safe_mu))
        e_c = eb * (em1 + 2) / 2
        p00 = e_c - 0.5j * wk * e_s
        p11 = e_c + 0.5j * wk * e_s
        p01 = 0.5 * r * e_s
        x0 = t_out[s0].copy()
        x1 = t_out[s1].copy()
        t_out[s0] = p00 * x0 + p01 * x1
        t_out[s1] = p01 * x0 + p11 * x1
    if relax:
        out = out + _drive(system, t)
    return out


def _relax_step(dev: np.ndarray, system: SpinSystem, h: float, damp2: np.ndarray) -> np.ndarray:
    n = system.n
    out = dev * damp2
    e1 = np.exp(-h / system.t1)
    for k in range(n):
        t_out, s0, s1 = _pair_views(out, k, n)
        c, s = (1 + e1[k]) / 2, (1 - e1[k]) / 2
        x0 = t_out[s0].copy()
        x1 = t_out[s1].copy()
        t_out[s0] = c * x0 + s * x1
        t_out[s1] = s * x0 + c * x1
    return out + _drive(system, h)


def _evolve_strang(dev, system: SpinSystem, t: float, decoupled, relax: bool, step: float | None):
    energy = np.real(np.diag(free_hamiltonian(system, decoupled)))
    ediff = energy[:, None] - energy[None, :]
    if not relax:
        return dev * np.exp(-1j * ediff * t)
    h_max = step if step is not None else step_bound(system, decoupled)
    nsteps = max(1, math.ceil(t / h_max - 1e-9))
    h = t / nsteps
    md = np.abs(_mdiff(system.n))
    r2sum = np.einsum("l,lab->ab", 1.0 / system.t2, md)
    phase = np.exp(-1j * ediff * h)
    half = np.exp(-r2sum * h / 2)
    full = half * half
    out = _relax_step(dev, system, h / 2, half)
    for i in range(nsteps):
        out = out * phase
        out = _relax_step(out, system, h if i < nsteps - 1 else h / 2, full if i < nsteps - 1 else half)
    return out


def evolve_delay(
    state: SpinState,
    system: SpinSystem,
    delay: Delay,
    method: str = "exact",
    step: float | None = None,
) -> SpinState:
    """Free evolution for ``delay.duration`` seconds, with optional relaxation.

    ``method="strang"`` uses the split integrator; ``step`` overrides its
    step size (otherwise the system's step bound is used).
    """
    if isinstance(delay.duration, str):
        raise ValueError(f"delay {delay.duration!r} is unbound")
    t = float(delay.duration)
    if t == 0:
        return state
    if method == "exact":
        dev = _evolve_exact(np.array(state.deviation), system, t, delay.decouple, delay.relaxation)
    elif method == "strang":
        dev = _evolve_strang(np.array(state.deviation), system, t, delay.decouple, delay.relaxation, step)
    else:
        raise ValueError(f"unknown integrator {method!r}")
    return SpinState(dev, state.epsilon_ref)


def expectation(state: SpinState, op: np.ndarray) -> complex:
    return complex(np.trace(state.deviation @ op))


def product_coefficient(state: SpinState, op: np.ndarray) -> float:
    """Coefficient of a product operator in the state, <op|rho>/<op|op>."""
    num = np.trace(op.conj().T @ state.deviation)
    den = np.trace(op.conj().T @ op)
    return float(np.real(num / den))


__all__ = [
    "Pulse",
    "Delay",
    "free_hamiltonian",
    "apply_pulse",
    "evolve_delay",
    "pulse_unitary",
    "step_bound",
    "spin_operator",
    "product_coefficient",
]
