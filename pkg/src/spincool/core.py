"""Spin systems, high-temperature states and per-spin polarization read-out.

States are stored as traceless deviation matrices in the product basis
|s_1 s_2 ... s_n>, bit 0 = spin up (I_z = +1/2), spin 1 most significant.
Polarizations are expressed in units of the equilibrium 13C polarization,
so a thermal 13C reads 1.0 and a thermal 1H reads the gyromagnetic ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

# gamma(1H) / gamma(13C) = 26.752 / 6.728 = 3.9762; 3.977 is the configured default
GAMMA_H_OVER_C = 3.977

SPECIES_GAMMA: dict[str, float] = {"H1": GAMMA_H_OVER_C, "C13": 1.0}

MAX_SPINS = 8


class SpinSystemError(ValueError):
    pass


@dataclass(frozen=True)
class Nucleus:
    species: str
    label: str
    gamma_rel: float

    def __post_init__(self):
        if not self.gamma_rel > 0:
            raise SpinSystemError(f"gamma_rel must be positive for {self.label!r}")


def nucleus(species: str, label: str, gamma_ratio: float | None = None) -> Nucleus:
    """Build a nucleus with the default gyromagnetic ratio of its species.

    ``gamma_ratio`` overrides the 1H/13C ratio (only meaningful for H1).
    """
    if species not in SPECIES_GAMMA:
        raise SpinSystemError(f"unknown species {species!r}")
    gamma = SPECIES_GAMMA[species]
    if species == "H1" and gamma_ratio is not None:
        gamma = float(gamma_ratio)
    return Nucleus(species, label, gamma)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpinSystem:
    spins: tuple[Nucleus, ...]
    shifts: np.ndarray
    j_couplings: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    temperature: float = 297.0
    name: str = ""

    def __post_init__(self):
        spins = tuple(self.spins)
        n = len(spins)
        object.__setattr__(self, "spins", spins)
        if not 1 <= n <= MAX_SPINS:
            raise SpinSystemError(f"spin count must be in [1, {MAX_SPINS}], got {n}")
        labels = [s.label for s in spins]
        if len(set(labels)) != n:
            raise SpinSystemError(f"duplicate spin labels in {labels}")
        for name, shape in (("shifts", (n,)), ("t1", (n,)), ("t2", (n,)), ("j_couplings", (n, n))):
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise SpinSystemError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        j = self.j_couplings
        if not np.array_equal(j, j.T):
            i, k = np.argwhere(j != j.T)[0]
            raise SpinSystemError(f"J matrix not symmetric at ({labels[i]}, {labels[k]})")
        if np.any(np.diag(j) != 0):
            raise SpinSystemError("J matrix diagonal must be zero")
        if np.any(~(self.t1 > 0)) or np.any(~(self.t2 > 0)):
            raise SpinSystemError("relaxation times must be positive")
        if np.any(self.t2 > 2 * self.t1):
            raise SpinSystemError("T2 may not exceed 2*T1")
        if not self.temperature > 0:
            raise SpinSystemError("temperature must be positive")

    @property
    def n(self) -> int:
        return len(self.spins)

    @property
    def dim(self) -> int:
        return 2**self.n

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.spins]

    @property
    def species(self) -> list[str]:
        return [s.species for s in self.spins]

    @property
    def gammas(self) -> np.ndarray:
        return np.array([s.gamma_rel for s in self.spins])

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SpinSystemError(f"no spin labelled {label!r}") from None

    def indices_of_species(self, species: str) -> list[int]:
        return [i for i, s in enumerate(self.spins) if s.species == species]

    def j(self, a: str, b: str) -> float:
        return float(self.j_couplings[self.index(a), self.index(b)])

    def replace(self, **changes) -> "SpinSystem":
        fields = dict(
            spins=self.spins,
            shifts=self.shifts,
            j_couplings=self.j_couplings,
            t1=self.t1,
            t2=self.t2,
            temperature=self.temperature,
            name=self.name,
        )
        fields.update(changes)
        return SpinSystem(**fields)


@dataclass(frozen=True, eq=False)
class SpinState:
    """Deviation density matrix in units of the equilibrium 13C polarization."""

    deviation: np.ndarray
    epsilon_ref: float = 1.0
    n_spins: int = field(init=False)

    def __post_init__(self):
        dev = np.array(self.deviation, dtype=complex)
        dim = dev.shape[0]
        n = int(round(math.log2(dim))) if dim else 0
        if dev.shape != (dim, dim) or 2**n != dim:
            raise ValueError(f"deviation must be 2^n x 2^n, got {dev.shape}")
        dev.setflags(write=False)
        object.__setattr__(self, "deviation", dev)
        object.__setattr__(self, "n_spins", n)

    @property
    def dim(self) -> int:
        return self.deviation.shape[0]

    def hermiticity_error(self) -> float:
        d = self.deviation
        return float(np.max(np.abs(d - d.conj().T)))

    def trace_error(self) -> float:
        return float(abs(np.trace(self.deviation)))

    def __add__(self, other: "SpinState") -> "SpinState":
        return SpinState(self.deviation + other.deviation, self.epsilon_ref)

    def __mul__(self, a: float) -> "SpinState":
        return SpinState(a * self.deviation, self.epsilon_ref)

    __rmul__ = __mul__


# Single-spin operators, spin-1/2.
_SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
_SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
_SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
_ONE_SPIN = {"x": _SX, "y": _SY, "z": _SZ}


def embed(op: np.ndarray, i: int, n: int) -> np.ndarray:
    """Kronecker-embed a 2x2 operator on spin ``i`` of ``n``."""
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


@lru_cache(maxsize=None)
def _spin_op(axis: str, i: int, n: int) -> np.ndarray:
    m = embed(_ONE_SPIN[axis], i, n)
    m.setflags(write=False)
    return m


def spin_operator(axis: str, i: int, n: int) -> np.ndarray:
    """I_x, I_y or I_z of spin ``i`` in an ``n``-spin product space (read-only)."""
    return _spin_op(axis, i, n)


def product_operator(factors: dict[int, str], n: int) -> np.ndarray:
    """Product of single-spin operators, e.g. ``{0: 'x', 1: 'z'}`` gives I_x S_z.

    The usual product-operator prefactor 2^(m-1) is applied, so {0:'x',1:'z'}
    returns 2 I_x S_z.
    """
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, _ONE_SPIN[factors[k]] if k in factors else np.eye(2))
    return out * 2 ** (len(factors) - 1)


def _z_diagonal(n: int) -> np.ndarray:
    """m_k(a) for every basis index a: shape (n, 2^n), values +-1/2."""
    idx = np.arange(2**n)
    bits = (idx[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    return 0.5 - bits


def thermal_state(system: SpinSystem) -> SpinState:
    """High-temperature equilibrium: sum_i gamma_i I_z^(i)."""
    m = _z_diagonal(system.n)
    diag = system.gammas @ m
    return SpinState(np.diag(diag.astype(complex)))


def state_from_polarizations(eps: Sequence[float]) -> SpinState:
    """Uncorrelated longitudinal state with the given per-spin polarizations."""
    eps = np.asarray(eps, dtype=float)
    m = _z_diagonal(len(eps))
    return SpinState(np.diag((eps @ m).astype(complex)))


def polarizations(state: SpinState) -> np.ndarray:
    """Longitudinal polarization of every spin, thermal 13C = 1."""
    n = state.n_spins
    d = np.real(np.diag(state.deviation))
    m = _z_diagonal(n)
    # 2 tr(rho I_z) / 2^(n-1)
    return 2.0 * (m @ d) / 2 ** (n - 1)


def magnetization(state: SpinState, i: int) -> np.ndarray:
    """(x, y, z) magnetization of spin ``i`` on the same scale as ``polarizations``."""
    n = state.n_spins
    return np.array([
        2.0 * np.real(np.trace(state.deviation @ spin_operator(a, i, n))) / 2 ** (n - 1) for a in "xyz"
    ])


def zero_state(n: int) -> SpinState:
    return SpinState(np.zeros((2**n, 2**n), dtype=complex))


def resolve_targets(system: SpinSystem, targets: str | Iterable[str]) -> list[int]:
    """Resolve a spin selector to sorted indices.

    Accepted selectors: ``"ALL"``, ``"@<species>"``, a comma-separated label
    string, or an iterable of labels.
    """
    if isinstance(targets, str):
        sel = targets.strip()
        if sel == "ALL":
            return list(range(system.n))
        if sel.startswith("@"):
            idx = system.indices_of_species(sel[1:])
            if not idx:
                raise SpinSystemError(f"no spins of species {sel[1:]!r}")
            return idx
        labels = [t for t in sel.split(",") if t]
    else:
        labels = list(targets)
    if not labels:
        raise SpinSystemError("empty target selector")
    return sorted({system.index(lab) for lab in labels})


def entropy_proxy(state: SpinState) -> float:
    """Sum of squared polarizations, in epsilon^2 units.

    In the high-temperature expansion each spin's entropy is
    1 - eps^2/ln4 bits, so this proxy is the entropy deficit below the
    maximally mixed state in eps^2/ln4 units; larger means colder.
    """
    return float(np.sum(polarizations(state) ** 2))


def entropy_deficit(state: SpinState, eps0: float = 1e-5) -> float:
    """Exact von Neumann entropy deficit n ln2 - S (nats) of the full state.

    The full density matrix is (1 + 2 eps0 deviation) / 2^n, i.e. a thermal
    13C carries absolute polarization eps0.
    """
    lam = np.linalg.eigvalsh(state.deviation)
    x = 2 * eps0 * lam
    if np.min(x) <= -1:
        raise ValueError("eps0 too large: density matrix not positive")
    return float(np.sum((1 + x) * np.log1p(x) - x) / state.dim)


def von_neumann_entropy(state: SpinState, eps0: float = 1e-5) -> float:
    """Exact entropy in nats of the full state at absolute scale ``eps0``."""
    return state.n_spins * math.log(2) - entropy_deficit(state, eps0)
