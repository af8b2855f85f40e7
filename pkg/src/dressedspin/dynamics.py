"""Density-matrix propagation under piecewise time-dependent Hamiltonians.

Hamiltonians are angular frequencies (rad/s). A time-dependent Hamiltonian is
carried as a finite Fourier sum (:class:`FourierHamiltonian`) so that the
frame transform and the rotating-wave truncation are exact bookkeeping on
matrix elements, and the integrator knows the fastest frequency present.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .spinsys import TWO_PI


class StepTooLargeError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class CollapseChannel:
    operator: np.ndarray
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("collapse rate must be non-negative")


@dataclass(frozen=True)
class PropagationOptions:
    step: float = 1e-6  # ceiling; the rotating frame refines it from the fastest rate
    method: str = "expm"  # "expm" (4th-order Magnus, unitary per step) or "rk4"
    frame: str = "rotating"  # "rotating" or "lab"
    rwa: bool = True
    tolerance: float = 1e-9
    steps_per_period: int = 20

    def __post_init__(self):
        if not self.step > 0 or not self.tolerance > 0:
            raise ValueError("step and tolerance must be positive")
        if self.method not in ("rk4", "expm"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.frame not in ("rotating", "lab"):
            raise ValueError(f"unknown frame {self.frame!r}")


@dataclass
class FourierHamiltonian:
    """``H(t) = static + sum_k A_k exp(i 2 pi nu_k t)``; the sum is Hermitian overall."""

    static: np.ndarray
    terms: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __call__(self, t: float) -> np.ndarray:
        h = self.static.copy()
        for a, nu in self.terms:
            h += a * np.exp(1j * TWO_PI * nu * t)
        return h

    @property
    def is_static(self) -> bool:
        return not self.terms

    @property
    def max_frequency(self) -> float:
        return max((abs(nu) for _, nu in self.terms), default=0.0)

    @property
    def scale(self) -> float:
        """Bound on the spectral radius, rad/s."""
        s = np.abs(self.static).sum(axis=1).max()
        for a, _ in self.terms:
            s += np.abs(a).sum(axis=1).max()
        return float(s)

    def __add__(self, other: "FourierHamiltonian") -> "FourierHamiltonian":
        return FourierHamiltonian(self.static + other.static, self.terms + other.terms)

    def compact(self, freq_atol: float = 1e-9) -> "FourierHamiltonian":
        """Merge terms at equal frequency; fold zero-frequency terms into the static part."""
        static = self.static.copy()
        merged: dict[float, np.ndarray] = {}
        for a, nu in self.terms:
            if abs(nu) <= freq_atol:
                static = static + a
                continue
            key = next((k for k in merged if abs(k - nu) <= freq_atol), nu)
            merged[key] = merged.get(key, 0) + a
        terms = [(a, nu) for nu, a in merged.items() if np.abs(a).max() > 0]
        return FourierHamiltonian(static, terms)


def drive_terms(op: np.ndarray, amplitude: float, carrier: float, phase: float) -> list[tuple[np.ndarray, float]]:
    """``amplitude * cos(2 pi carrier t + phase) * op`` as two Fourier terms."""
    a = 0.5 * amplitude * op
    return [(a * np.exp(1j * phase), carrier), (a * np.exp(-1j * phase), -carrier)]


def lab_hamiltonian(static: np.ndarray, drives: Sequence[tuple[np.ndarray, float, float, float]]) -> FourierHamiltonian:
    """Lab-frame Hamiltonian from a static part and (operator, amplitude rad/s, carrier Hz, phase) drives."""
    terms = []
    for op, amp, carrier, phase in drives:
        if carrier == 0:
            static = static + amp * math.cos(phase) * op
        else:
            terms += drive_terms(op, amp, carrier, phase)
    return FourierHamiltonian(np.array(static, dtype=complex), terms)


def frame_from_carrier(generator_diag: Sequence[float], carrier: float) -> np.ndarray:
    return carrier * np.asarray(generator_diag, dtype=float)


def default_cutoff(frame: np.ndarray) -> float:
    gaps = np.abs(frame[:, None] - frame[None, :])
    gaps = gaps[gaps > 0]
    return 0.5 * gaps.min() if gaps.size else math.inf


def rotating_frame_hamiltonian(
    h_lab: FourierHamiltonian,
    frame: Sequence[float],
    rwa: bool = True,
    cutoff: float | None = None,
) -> FourierHamiltonian:
    """Transform with ``U = exp(-i 2 pi P t)``, ``P = diag(frame)`` in Hz.

    ``H_rot = U^dag H U - 2 pi P``. Element (i, j) of a term at frequency nu
    moves to ``nu + p_i - p_j``. With ``rwa`` every component whose residual
    frequency exceeds ``cutoff`` is dropped; the default cutoff is half the
    smallest nonzero frame gap, which removes the terms near twice the carrier
    and keeps the co-rotating ones.
    """
    p = np.asarray(frame, dtype=float)
    dp = p[:, None] - p[None, :]
    if cutoff is None:
        cutoff = default_cutoff(p)
    parts = [(h_lab.static, 0.0)] + list(h_lab.terms)
    static = -TWO_PI * np.diag(p).astype(complex)
    terms: list[tuple[np.ndarray, float]] = []
    for a, nu in parts:
        shifted = nu + dp
        for f in np.unique(np.round(shifted, 6)):
            mask = np.isclose(shifted, f, rtol=0, atol=1e-6)
            comp = np.where(mask, a, 0)
            if not np.any(comp):
                continue
            if rwa and abs(f) > cutoff:
                continue
            if abs(f) <= 1e-6:
                static = static + comp
            else:
                terms.append((comp, float(f)))
    return FourierHamiltonian(static, terms).compact()


def pure(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def population(rho: np.ndarray, psi: np.ndarray) -> float:
    p = float(np.real(np.vdot(psi, rho @ psi)))
    if p < -1e-9 or p > 1 + 1e-9:
        raise InvariantViolation(f"population {p} outside [0, 1]")
    return min(max(p, 0.0), 1.0)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def check_density(rho: np.ndarray, tol: float = 1e-9) -> None:
    if not np.allclose(rho, rho.conj().T, atol=tol):
        raise InvariantViolation("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1) > tol:
        raise InvariantViolation(f"trace {tr} != 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise InvariantViolation("density matrix is not positive semidefinite")


def _dissipator_parts(channels):
    ops = [(math.sqrt(c.rate) * c.operator) for c in channels if c.rate > 0]
    if not ops:
        return None
    ld = [l.conj().T for l in ops]
    anti = sum(d @ l for d, l in zip(ld, ops))
    return ops, ld, anti


def _rhs(h, rho, diss):
    out = -1j * (h @ rho - rho @ h)
    if diss is not None:
        ops, ld, anti = diss
        for l, d in zip(ops, ld):
            out += l @ rho @ d
        out -= 0.5 * (anti @ rho + rho @ anti)
    return out


def liouvillian(h: np.ndarray, channels: Sequence[CollapseChannel]) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    n = h.shape[0]
    eye = np.eye(n)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in channels:
        if c.rate <= 0:
            continue
        l = c.operator
        ll = l.conj().T @ l
        lv += c.rate * (np.kron(l, l.conj()) - 0.5 * np.kron(ll, eye) - 0.5 * np.kron(eye, ll.T))
    return lv


def unitary(h: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def _step_size(h: FourierHamiltonian, opts: PropagationOptions, span: float) -> tuple[int, float]:
    if span <= 0:
        return 0, 0.0
    fmax = h.max_frequency
    if opts.frame == "lab":
        if fmax > 0 and opts.step > 1.0 / (opts.steps_per_period * fmax):
            raise StepTooLargeError(
                f"step {opts.step:.3g} s gives fewer than {opts.steps_per_period} samples per carrier period"
            )
        step = opts.step
    else:
        rate = max(fmax, h.scale / TWO_PI)
        step = min(opts.step, 1.0 / (opts.steps_per_period * rate)) if rate > 0 else opts.step
    n = max(1, math.ceil(span / step - 1e-9))
    return n, span / n


_GAUSS = 0.5 - math.sqrt(3) / 6


def propagate(
    h_of_t: FourierHamiltonian | Callable[[float], np.ndarray],
    channels: Sequence[CollapseChannel],
    rho0: np.ndarray,
    t0: float,
    t1: float,
    opts: PropagationOptions = PropagationOptions(),
) -> np.ndarray:
    """Integrate the Lindblad master equation from ``t0`` to ``t1``.

    Static Hamiltonians are propagated exactly. Otherwise ``expm`` uses a
    fixed fourth-order Magnus (two-point Gauss) exponential step, which keeps
    rho Hermitian and positive to rounding, and ``rk4`` a fixed fourth-order
    Runge-Kutta step on the master equation, which does not.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    span = t1 - t0
    rho = np.array(rho0, dtype=complex)
    if span == 0:
        return rho
    channels = [c for c in channels if c.rate > 0]
    if not isinstance(h_of_t, FourierHamiltonian):
        h_of_t = _SampledHamiltonian(h_of_t)
    if h_of_t.is_static:
        h = h_of_t.static
        if channels:
            prop = expm(liouvillian(h, channels) * span)
            rho = (prop @ rho.reshape(-1)).reshape(rho.shape)
        else:
            u = unitary(h, span)
            rho = u @ rho @ u.conj().T
    else:
        n, dt = _step_size(h_of_t, opts, span)
        if opts.method == "rk4":
            rho = _rk4(h_of_t, channels, rho, t0, n, dt)
        else:
            rho = _magnus(h_of_t, channels, rho, t0, n, dt)
    drift = abs(np.trace(rho).real - 1.0)
    if drift > 10 * opts.tolerance:
        raise InvariantViolation(f"trace drifted by {drift:.3g}")
    return rho


def _rk4(h, channels, rho, t0, n, dt):
    diss = _dissipator_parts(channels)
    for k in range(n):
        t = t0 + k * dt
        h0 = h(t)
        hm = h(t + dt / 2)
        h1 = h(t + dt)
        k1 = _rhs(h0, rho, diss)
        k2 = _rhs(hm, rho + 0.5 * dt * k1, diss)
        k3 = _rhs(hm, rho + 0.5 * dt * k2, diss)
        k4 = _rhs(h1, rho + dt * k3, diss)
        rho = rho + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def _magnus(h, channels, rho, t0, n, dt):
    c = math.sqrt(3) / 12
    for k in range(n):
        t = t0 + k * dt
        h1 = h(t + _GAUSS * dt)
        h2 = h(t + (1 - _GAUSS) * dt)
        if channels:
            l1 = liouvillian(h1, channels)
            l2 = liouvillian(h2, channels)
            gen = 0.5 * dt * (l1 + l2) + c * dt * dt * (l2 @ l1 - l1 @ l2)
            rho = (expm(gen) @ rho.reshape(-1)).reshape(rho.shape)
        else:
            # -i Heff dt = dt/2 (A1 + A2) + c dt^2 [A2, A1] with A = -i H
            heff = 0.5 * (h1 + h2) - 1j * c * dt * (h2 @ h1 - h1 @ h2)
            u = unitary(heff, dt)
            rho = u @ rho @ u.conj().T
    return rho


class _SampledHamiltonian(FourierHamiltonian):
    """Wrap an arbitrary callable; the step comes from the options only."""

    def __init__(self, fn):
        self._fn = fn
        self.static = fn(0.0)
        self.terms = []

    def __call__(self, t):
        return self._fn(t)

    @property
    def is_static(self):
        return False

    @property
    def max_frequency(self):
        return 0.0

    @property
    def scale(self):
        return 0.0
