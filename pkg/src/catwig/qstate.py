"""Coherent and N-component cat states and their Wigner functions.

States are kept symbolically as weighted superpositions of coherent states.
The Wigner function is evaluated in closed form through the displaced-parity
identity ``W(beta) = (2/pi) <psi| D(beta) P D(-beta) |psi>``; a Fock-basis
expansion of the same quantity serves as an independent check.

Phase-space convention: ``beta = x + i p``, vacuum variance 1/2 per
quadrature, so the coherent-state Wigner function is
``(2/pi) exp(-2 |beta - alpha|^2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

W_MAX = 2.0 / math.pi
N_PHOTON_RANGE = (1, 100)
_IMAG_TOL = 1e-10
_NORM_TOL = 1e-12
_TAIL_TOL = 1e-10


class StateClass(enum.IntEnum):
    COHERENT = 0
    CAT2 = 1
    CAT3 = 2
    CAT4 = 3

    @property
    def n_components(self) -> int:
        return 1 if self is StateClass.COHERENT else int(self) + 1

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "StateClass":
        """Accept an enum member, an integer id or a name like ``"cat2"``."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if key in cls.__members__:
                return cls[key]
            if key.isdigit():
                value = int(key)
            else:
                raise ValueError(f"unknown state class {value!r}")
        try:
            return cls(int(value))
        except (ValueError, TypeError):
            raise ValueError(f"unknown state class {value!r}") from None


class ContractError(ValueError):
    """A state handed to a Wigner evaluator violates its preconditions."""


class TruncationError(RuntimeError):
    """The Fock cutoff is too small for the requested evaluation."""


@dataclass(frozen=True)
class StateSpec:
    coefficients: np.ndarray  # complex, shape (N,)
    centers: np.ndarray  # complex, shape (N,)
    class_id: StateClass
    n_photon: int
    alpha: complex = field(default=0j)

    @property
    def components(self) -> list[tuple[complex, complex]]:
        return list(zip(self.coefficients.tolist(), self.centers.tolist()))

    def norm_squared(self) -> float:
        gram = coherent_overlap(self.centers[None, :], self.centers[:, None])
        c = self.coefficients
        value = np.conj(c) @ gram @ c
        return float(value.real)


def coherent_overlap(a, b):
    """Return ``<b|a>`` for coherent states; broadcasts over array inputs."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    out = np.exp(-(np.abs(a) ** 2 + np.abs(b) ** 2) / 2 + np.conj(b) * a)
    return out if out.ndim else complex(out)


def superposition(coefficients, centers, class_id=StateClass.COHERENT, n_photon=1) -> StateSpec:
    """Normalize an arbitrary coherent-state superposition."""
    c = np.atleast_1d(np.asarray(coefficients, dtype=complex))
    z = np.atleast_1d(np.asarray(centers, dtype=complex))
    if c.size == 0 or c.shape != z.shape:
        raise ValueError("need matching, non-empty coefficient and center lists")
    raw = StateSpec(c, z, StateClass.parse(class_id), int(n_photon))
    norm2 = raw.norm_squared()
    if not norm2 > 0:
        raise ValueError("superposition has zero norm")
    return StateSpec(c / math.sqrt(norm2), z, raw.class_id, raw.n_photon, complex(z[0]) if z.size == 1 else raw.alpha)


def make_state(class_id, n_photon: int) -> StateSpec:
    """Build the coherent state or equal-weight cat with amplitude ``sqrt(n_photon)``."""
    cls = StateClass.parse(class_id)
    if isinstance(n_photon, bool) or int(n_photon) != n_photon:
        raise ValueError(f"n_photon must be an integer, got {n_photon!r}")
    n_photon = int(n_photon)
    lo, hi = N_PHOTON_RANGE
    if not lo <= n_photon <= hi:
        raise ValueError(f"n_photon must lie in [{lo}, {hi}], got {n_photon}")
    return _symmetric_state(cls, math.sqrt(n_photon), n_photon)


def _symmetric_state(cls: StateClass, alpha: float, n_photon: int) -> StateSpec:
    # also used directly for the vacuum (alpha = 0), which make_state rejects
    count = cls.n_components
    k = np.arange(count)
    centers = alpha * np.exp(2j * np.pi * k / count)
    if count == 4:
        # exact quarter turns; exp() leaves ~1e-16 residue otherwise
        centers = alpha * np.array([1, 1j, -1, -1j])
    elif count == 2:
        centers = alpha * np.array([1.0, -1.0], dtype=complex)
    state = superposition(np.ones(count), centers, cls, n_photon)
    return StateSpec(state.coefficients, state.centers, cls, n_photon, complex(alpha))


def vacuum() -> StateSpec:
    return _symmetric_state(StateClass.COHERENT, 0.0, 0)


def default_extent(n_photon: int) -> float:
    return math.sqrt(n_photon) + 4.0


@dataclass
class WignerGrid:
    """Wigner values on a square grid.

    Rows run over Im(beta) descending, columns over Re(beta) ascending; both
    axes sample ``linspace(-extent, extent, resolution)`` inclusive.
    """

    values: np.ndarray
    extent: float
    resolution: int

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.resolution)

    @property
    def cell_area(self) -> float:
        step = 2 * self.extent / (self.resolution - 1)
        return step * step

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)


def grid_points(extent: float, resolution: int) -> np.ndarray:
    axis = np.linspace(-extent, extent, resolution)
    return axis[None, :] + 1j * axis[::-1, None]


def _check_normalized(state: StateSpec) -> None:
    err = abs(state.norm_squared() - 1.0)
    if not err < _NORM_TOL * 10:
        raise ContractError(f"state is not normalized (|<psi|psi> - 1| = {err:.3g})")


def wigner_at(state: StateSpec, beta) -> np.ndarray:
    """Closed-form Wigner function at arbitrary points ``beta`` (any shape)."""
    _check_normalized(state)
    beta = np.asarray(beta, dtype=complex)
    total = np.zeros(beta.shape, dtype=complex)
    c = state.coefficients
    z = state.centers
    for j in range(z.size):
        gj = z[j] - beta
        log_dj = np.log(c[j]) + (-beta * np.conj(z[j]) + np.conj(beta) * z[j]) / 2
        for k in range(z.size):
            gk = z[k] - beta
            log_dk = np.log(c[k]) + (-beta * np.conj(z[k]) + np.conj(beta) * z[k]) / 2
            # real part collapses to -|g_j + g_k|^2 / 2, so a single exp never overflows
            expo = log_dj + np.conj(log_dk) - (np.abs(gj) ** 2 + np.abs(gk) ** 2) / 2 - np.conj(gk) * gj
            total += np.exp(expo)
    residue = np.max(np.abs(total.imag)) if total.size else 0.0
    if residue > _IMAG_TOL:
        raise ContractError(f"parity sum left imaginary residue {residue:.3g}")
    return W_MAX * total.real


def wigner_analytic(state: StateSpec, extent: float, resolution: int) -> WignerGrid:
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if not extent > 0:
        raise ValueError("extent must be positive")
    values = wigner_at(state, grid_points(extent, resolution))
    return WignerGrid(values, float(extent), int(resolution))


def fock_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    """``<m|alpha>`` for m = 0..n_max, built by the stable recurrence."""
    out = np.empty(n_max + 1, dtype=complex)
    out[0] = math.exp(-abs(alpha) ** 2 / 2)
    for m in range(1, n_max + 1):
        out[m] = out[m - 1] * alpha / math.sqrt(m)
    return out


def min_fock_cutoff(state: StateSpec) -> int:
    n = max(state.n_photon, 0)
    return int(math.ceil(n + 6 * math.sqrt(n) + 10))


def wigner_fock_oracle(state: StateSpec, beta: complex, n_max: int | None = None) -> float:
    """Wigner value at one point from a truncated photon-number expansion.

    Each coherent component is displaced analytically, expanded in the Fock
    basis, and the parity expectation is summed with alternating signs. With
    ``n_max=None`` a cutoff large enough for the displaced amplitudes is
    chosen automatically.
    """
    beta = complex(beta)
    shifted = state.centers - beta
    if n_max is None:
        r = float(np.max(np.abs(shifted)))
        n_max = max(min_fock_cutoff(state), int(math.ceil(r * r + 12 * r + 40)))
    if n_max < min_fock_cutoff(state):
        raise TruncationError(f"n_max={n_max} below the safety margin {min_fock_cutoff(state)}")
    psi = np.zeros(n_max + 1, dtype=complex)
    for c, z, g in zip(state.coefficients, state.centers, shifted):
        phase = np.exp((-beta * np.conj(z) + np.conj(beta) * z) / 2)
        psi += c * phase * fock_amplitudes(g, n_max)
    weights = np.abs(psi) ** 2
    tail = 1.0 - weights.sum()
    if tail > _TAIL_TOL:
        raise TruncationError(f"n_max={n_max} leaves tail probability {tail:.3g}")
    signs = np.where(np.arange(n_max + 1) % 2 == 0, 1.0, -1.0)
    return float(W_MAX * (signs @ weights))
