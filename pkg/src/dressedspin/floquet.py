"""Floquet quasi-energies of the periodically driven spin-1.

For ``H(t) = h_static + v_drive * cos(omega t)`` the extended (Sambe-space)
matrix has diagonal blocks ``h_static + n omega`` and ``v_drive / 2`` between
neighbouring Fourier indices. Its eigenvalues are the quasi-energies, defined
modulo ``omega``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .spinsys import (
    TWO_PI,
    Drive,
    FieldEnv,
    SpinConfig,
    eigenbasis,
    static_hamiltonian,
    zero_field_eigenbasis,
)

N_MAX_LIMIT = 1000


class FloquetConvergenceError(RuntimeError):
    def __init__(self, msg, estimates=None):
        super().__init__(msg)
        self.estimates = estimates


class AmbiguousLabelError(RuntimeError):
    pass


class SingularFitError(ValueError):
    pass


# A reference state lives on a few Fourier blocks: {n: 3-vector}.
Reference = Sequence[tuple[str, dict[int, np.ndarray]]]


@dataclass(frozen=True)
class FloquetProblem:
    h_static: np.ndarray
    v_drive: np.ndarray
    omega: float
    n_max: int = 20

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        for m in (self.h_static, self.v_drive):
            if not np.allclose(m, m.conj().T, atol=1e-12 * max(1.0, np.abs(m).max())):
                raise ValueError("Floquet inputs must be Hermitian")

    @property
    def dim(self) -> int:
        return self.h_static.shape[0]


@dataclass(frozen=True)
class Level:
    label: str
    energy: float  # folded into (-omega/2, omega/2], rad/s
    weight: float
    raw: float  # eigenvalue of the selected Floquet copy, rad/s


@dataclass(frozen=True)
class QuasiEnergySpectrum:
    levels: tuple[Level, ...]
    omega: float
    n_max: int

    def __getitem__(self, label: str) -> Level:
        for lv in self.levels:
            if lv.label == label:
                return lv
        raise KeyError(label)

    @property
    def labels(self) -> list[str]:
        return [lv.label for lv in self.levels]


@dataclass
class DispersionCurve:
    field_values: np.ndarray
    delta_f0: np.ndarray
    axis: str = "x"

    def __post_init__(self):
        self.field_values = np.asarray(self.field_values, dtype=float)
        self.delta_f0 = np.asarray(self.delta_f0, dtype=float)
        if self.field_values.shape != self.delta_f0.shape:
            raise ValueError("field and splitting arrays differ in length")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field_tesla", "delta_f0_hz"])
            for b, f in zip(self.field_values, self.delta_f0):
                w.writerow([repr(float(b)), repr(float(f))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "DispersionCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["field_tesla"]) for r in rows], [float(r["delta_f0_hz"]) for r in rows])


@dataclass(frozen=True)
class EvenPolyFit:
    c0: float
    c2: float
    c4: float
    rms_residual: float

    def __call__(self, b):
        b2 = np.asarray(b, dtype=float) ** 2
        return self.c0 + self.c2 * b2 + self.c4 * b2 * b2


def fold(x: float, omega: float) -> float:
    """Reduce into the zone (-omega/2, omega/2]."""
    y = math.fmod(x + omega / 2, omega)
    if y <= 0:
        y += omega
    return y - omega / 2


def build_floquet_matrix(p: FloquetProblem, n_max: int | None = None) -> np.ndarray:
    n_max = p.n_max if n_max is None else n_max
    if n_max > N_MAX_LIMIT:
        raise ValueError(f"n_max={n_max} exceeds the limit of {N_MAX_LIMIT}")
    d = p.dim
    nb = 2 * n_max + 1
    f = np.zeros((d * nb, d * nb), dtype=complex)
    eye = np.eye(d)
    half = p.v_drive / 2
    for k in range(nb):
        n = k - n_max
        s = slice(k * d, (k + 1) * d)
        f[s, s] = p.h_static + n * p.omega * eye
        if k + 1 < nb:
            s2 = slice((k + 1) * d, (k + 2) * d)
            f[s, s2] = half
            f[s2, s] = half.conj().T
    return f


def _embed(ref: dict[int, np.ndarray], n_max: int, d: int) -> np.ndarray:
    vec = np.zeros(d * (2 * n_max + 1), dtype=complex)
    for n, v in ref.items():
        k = n + n_max
        if not 0 <= k <= 2 * n_max:
            raise ValueError(f"reference block n={n} outside truncation n_max={n_max}")
        vec[k * d:(k + 1) * d] = v
    return vec / np.linalg.norm(vec)


def default_reference(p: FloquetProblem, names=("0", "-", "+")) -> list[tuple[str, dict[int, np.ndarray]]]:
    """Undriven eigenstates on the n = 0 block, ascending energy."""
    _, v = eigenbasis(p.h_static)
    return [(names[k] if k < len(names) else f"e{k}", {0: v[:, k]}) for k in range(p.dim)]


def _labelled(p: FloquetProblem, reference: Reference, n_max: int) -> list[Level]:
    w, v = np.linalg.eigh(build_floquet_matrix(p, n_max))
    used: set[int] = set()
    levels = []
    for label, ref in reference:
        r = _embed(ref, n_max, p.dim)
        ov = np.abs(r.conj() @ v) ** 2
        k = int(np.argmax(ov))
        if ov[k] < 0.5:
            raise AmbiguousLabelError(f"state {label!r}: best overlap {ov[k]:.3f} < 0.5")
        if k in used:
            raise AmbiguousLabelError(f"state {label!r} maps onto an already labelled Floquet state")
        used.add(k)
        levels.append(Level(label, fold(w[k], p.omega), float(ov[k]), float(w[k])))
    return levels


def quasi_energies(
    p: FloquetProblem,
    reference: Reference | None = None,
    tol_hz: float = 1.0,
    max_n: int = 200,
) -> QuasiEnergySpectrum:
    """Labelled quasi-energies with a truncation convergence check.

    The spectrum is recomputed at ``n_max + 5``; if any level moves by more
    than ``tol_hz`` the truncation is raised in steps of 5 up to ``max_n``.
    """
    reference = reference if reference is not None else default_reference(p)
    tol = TWO_PI * tol_hz
    n = p.n_max
    cur = _labelled(p, reference, n)
    while True:
        nxt = _labelled(p, reference, n + 5)
        diffs = [abs(fold(a.energy - b.energy, p.omega)) for a, b in zip(cur, nxt)]
        if max(diffs) <= tol:
            return QuasiEnergySpectrum(tuple(cur), p.omega, n)
        if n + 5 >= max_n:
            raise FloquetConvergenceError(
                f"quasi-energies not converged at n_max={n} (max change {max(diffs) / TWO_PI:.3g} Hz)",
                estimates=(cur, nxt),
            )
        n += 5
        cur = nxt


# -- the dressed spin-1 ------------------------------------------------------------


def nominal_basis(cfg: SpinConfig, env: FieldEnv | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Static eigen-energies and states ordered (|0>, lower, upper).

    States are phase-aligned to the zero-field basis (|0>, |->, |+>) where
    they can be matched, so the |+>-|-> dressing element stays positive.
    """
    h = static_hamiltonian(cfg, env)
    w, v = eigenbasis(h)
    try:
        z, plus, minus = zero_field_eigenbasis(cfg)
    except ValueError:
        return w, v
    ref = np.column_stack([z, minus, plus])
    ov = np.abs(ref.conj().T @ v) ** 2
    if np.all(np.diag(ov) > 0.5):
        return eigenbasis(h, ref)
    return w, v


def dressing_problem(cfg: SpinConfig, env: FieldEnv, dressing: Drive, n_max: int = 20) -> FloquetProblem:
    return FloquetProblem(
        h_static=static_hamiltonian(cfg, env),
        v_drive=TWO_PI * dressing.lab_amplitude * dressing.operator(),
        omega=TWO_PI * dressing.carrier,
        n_max=n_max,
    )


def dressed_reference(p: FloquetProblem, basis: np.ndarray) -> list[tuple[str, dict[int, np.ndarray]]]:
    """Reference states |0>, |+1>, |-1> built from the static basis (|0>, lower, upper).

    |+-1> = (|upper, n=0> +- e^{-i a} |lower, n=1>)/sqrt(2), with ``a`` the
    phase of the drive element between the two, so that |+1> is the upper
    Autler-Townes branch.
    """
    zero, low, up = basis[:, 0], basis[:, 1], basis[:, 2]
    c = np.vdot(up, p.v_drive @ low)
    ph = np.exp(-1j * np.angle(c)) if abs(c) > 0 else 1.0
    return [
        ("0", {0: zero}),
        ("+1", {0: up / math.sqrt(2), 1: ph * low / math.sqrt(2)}),
        ("-1", {0: up / math.sqrt(2), 1: -ph * low / math.sqrt(2)}),
    ]


def reference_frequency(cfg: SpinConfig, env: FieldEnv | None = None, include_shifts: bool = False) -> float:
    """Undriven |0> <-> |+> frequency in Hz, at zero magnetic field.

    ZFS shifts from ``env`` enter only when ``include_shifts`` is set.
    """
    if include_shifts and env is not None:
        env0 = FieldEnv(B=(0.0, 0.0, 0.0), Eel=env.Eel, dT=env.dT)
    else:
        env0 = FieldEnv()
    w, _ = nominal_basis(cfg, env0)
    return (w[2] - w[0]) / TWO_PI


@dataclass(frozen=True)
class TransitionLines:
    plus: float  # detuning of |0> <-> |+1>, Hz
    minus: float  # detuning of |0> <-> |-1>, Hz


def dressed_spectrum(cfg: SpinConfig, env: FieldEnv, dressing: Drive, n_max: int = 20, tol_hz: float = 1.0):
    p = dressing_problem(cfg, env, dressing, n_max)
    _, basis = nominal_basis(cfg, env)
    return quasi_energies(p, dressed_reference(p, basis), tol_hz=tol_hz)


def transition_spectrum(
    cfg: SpinConfig,
    env: FieldEnv,
    dressing: Drive,
    n_max: int = 20,
    include_shifts: bool = False,
) -> TransitionLines:
    """Probe detunings of the |0> <-> |+-1> lines from the undriven |0> <-> |+> resonance."""
    if dressing.channel != "magnetic-z":
        raise ValueError("the dressing drive must be on the magnetic-z channel")
    f_ref = reference_frequency(cfg, env, include_shifts)
    if dressing.rabi == 0:
        w, _ = nominal_basis(cfg, env)
        d = (w[2] - w[0]) / TWO_PI - f_ref
        return TransitionLines(d, d)
    spec = dressed_spectrum(cfg, env, dressing, n_max)
    omega = spec.omega
    target = TWO_PI * f_ref

    def line(label):
        x = spec[label].raw - spec["0"].raw
        x += omega * round((target - x) / omega)
        return x / TWO_PI - f_ref

    return TransitionLines(line("+1"), line("-1"))


def _splitting(cfg, env, dressing, n_max):
    spec = dressed_spectrum(cfg, env, dressing, n_max)
    return fold(spec["+1"].raw - spec["-1"].raw, spec.omega) / TWO_PI


def dressed_splitting_curve(
    cfg: SpinConfig,
    dressing: Drive,
    axis: str,
    fields: Sequence[float],
    n_max: int = 20,
    n_jobs: int = 1,
) -> DispersionCurve:
    """Energy difference between |+1> and |-1> versus a field along ``axis``."""
    idx = "xyz".index(axis)

    def env_for(b):
        vec = [0.0, 0.0, 0.0]
        vec[idx] = b
        return FieldEnv(B=tuple(vec))

    if n_jobs == 1:
        vals = [_splitting(cfg, env_for(b), dressing, n_max) for b in fields]
    else:
        from joblib import Parallel, delayed

        vals = Parallel(n_jobs=n_jobs)(delayed(_splitting)(cfg, env_for(b), dressing, n_max) for b in fields)
    return DispersionCurve(np.asarray(fields, dtype=float), np.asarray(vals), axis)


def fit_even_poly(curve: DispersionCurve) -> EvenPolyFit:
    """Unweighted least squares of ``c0 + c2 B^2 + c4 B^4``."""
    b = curve.field_values
    y = curve.delta_f0
    if b.size < 5:
        raise SingularFitError("need at least 5 points")
    scale = np.abs(b).max()
    if scale == 0:
        raise SingularFitError("degenerate field grid")
    u = (b / scale) ** 2
    a = np.column_stack([np.ones_like(u), u, u * u])
    coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    if rank < 3:
        raise SingularFitError("field grid does not determine an even quartic")
    resid = y - a @ coef
    return EvenPolyFit(
        c0=float(coef[0]),
        c2=float(coef[1] / scale**2),
        c4=float(coef[2] / scale**4),
        rms_residual=float(np.sqrt(np.mean(resid**2))),
    )
