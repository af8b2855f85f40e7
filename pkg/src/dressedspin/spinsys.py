"""Spin-1 operators, static and driven Hamiltonians.

Matrices are expressed in the Sz eigenbasis ordered (|+1_z>, |0_z>, |-1_z>).
Configuration values are linear frequencies (Hz) and SI fields; the returned
Hamiltonians are angular frequencies (rad/s).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi
SQRT2 = math.sqrt(2.0)

CHANNELS = ("magnetic-x", "magnetic-y", "magnetic-z", "electric")


class DegenerateBasisError(ValueError):
    """Raised when the zero-field basis is requested with E = 0."""


class ConfigError(ValueError):
    """Malformed or invalid configuration input."""


def spin1_operators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Sx, Sy, Sz) for S = 1 in the (|+1_z>, |0_z>, |-1_z>) basis."""
    s = 1.0 / SQRT2
    sx = np.array([[0, s, 0], [s, 0, s], [0, s, 0]], dtype=complex)
    sy = np.array([[0, -1j * s, 0], [1j * s, 0, -1j * s], [0, 1j * s, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


SX, SY, SZ = spin1_operators()
# E-type ZFS operator and its in-plane quadrature partner
SXX_MINUS_SYY = SX @ SX - SY @ SY
SXY_PLUS_SYX = SX @ SY + SY @ SX


@dataclass(frozen=True)
class ZfsParams:
    d: float
    e: float

    def __post_init__(self):
        if not self.d > 0:
            raise ConfigError(f"axial ZFS must be positive, got D={self.d}")
        if not 0 <= self.e < self.d:
            raise ConfigError(f"need 0 <= E < D, got E={self.e}, D={self.d}")


@dataclass(frozen=True)
class SpinConfig:
    """Physical constants of one defect.

    Defaults describe the basal kh divacancy used throughout the package:
    E = 18.353164 MHz, D = 1.336 GHz (example value) and a free-electron
    gyromagnetic ratio. Electric susceptibilities default to zero.
    """

    zfs: ZfsParams = field(default_factory=lambda: ZfsParams(1.336e9, 18.353164e6))
    gamma_e: float = 28.0e9
    d_parallel: float = 0.0
    d_perp: float = 0.0
    dd_dt: float = 0.0
    de_dt: float = 0.0

    def __post_init__(self):
        if not self.gamma_e > 0:
            raise ConfigError("gamma_e must be positive")
        for name in ("d_parallel", "d_perp", "dd_dt", "de_dt"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    @property
    def d(self) -> float:
        return self.zfs.d

    @property
    def e(self) -> float:
        return self.zfs.e


@dataclass(frozen=True)
class FieldEnv:
    B: tuple[float, float, float] = (0.0, 0.0, 0.0)
    Eel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dT: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(float(b) for b in self.B))
        object.__setattr__(self, "Eel", tuple(float(x) for x in self.Eel))
        vals = (*self.B, *self.Eel, self.dT)
        if len(self.B) != 3 or len(self.Eel) != 3 or not all(math.isfinite(v) for v in vals):
            raise ConfigError("field environment must hold finite 3-vectors")

    def shifted(self, dB=(0.0, 0.0, 0.0)) -> "FieldEnv":
        return replace(self, B=tuple(b + d for b, d in zip(self.B, dB)))


@dataclass(frozen=True)
class Drive:
    """A continuous-wave drive ``rabi_lab * cos(2 pi carrier t + phase) * O``.

    ``rabi`` is the resonant Rabi frequency on the targeted transition and
    ``coupling`` the magnitude of the operator's matrix element on that
    transition; the lab amplitude is ``rabi / coupling``. With the unit
    operators used here, coupling is 1 for |0>-|+> (x), |0>-|-> (y) and
    |+>-|-> (z, electric) and 1/sqrt(2) for the dressed |0>-|+-1> lines.
    """

    channel: str
    carrier: float
    rabi: float
    phase: float = 0.0
    coupling: float = 1.0
    angle: float = 0.0  # in-plane orientation of the electric drive

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ConfigError(f"unknown drive channel {self.channel!r}")
        if self.carrier < 0 or self.rabi < 0:
            raise ConfigError("carrier and rabi must be non-negative")
        if not self.coupling > 0:
            raise ConfigError("coupling must be positive")

    def operator(self) -> np.ndarray:
        if self.channel == "electric":
            return math.cos(self.angle) * SXX_MINUS_SYY + math.sin(self.angle) * SXY_PLUS_SYX
        return {"magnetic-x": SX, "magnetic-y": SY, "magnetic-z": SZ}[self.channel]

    @property
    def lab_amplitude(self) -> float:
        """Lab-frame amplitude in Hz multiplying the unit operator."""
        if self.rabi == 0:
            return 0.0
        element = self.coupling
        if self.channel == "electric":
            element *= abs(math.cos(self.angle))
            if element < 1e-12:
                raise ConfigError("electric drive orientation has no projection on the E axis")
        return self.rabi / element

    def with_(self, **kw) -> "Drive":
        return replace(self, **kw)


def apply_zfs_shifts(cfg: SpinConfig, env: FieldEnv) -> ZfsParams:
    """Shift D and E linearly with the electric field and temperature offset.

    The transverse shift uses the field component along the defect x axis,
    which is the axis of the E-type term in this frame.
    """
    d = cfg.d + cfg.d_parallel * env.Eel[2] + cfg.dd_dt * env.dT
    e = cfg.e + cfg.d_perp * env.Eel[0] + cfg.de_dt * env.dT
    return ZfsParams(d, e)


def static_hamiltonian(cfg: SpinConfig, env: FieldEnv | None = None) -> np.ndarray:
    env = env or FieldEnv()
    z = apply_zfs_shifts(cfg, env)
    bx, by, bz = env.B
    h = z.d * (SZ @ SZ) + z.e * SXX_MINUS_SYY
    h = h + cfg.gamma_e * (bx * SX + by * SY + bz * SZ)
    return TWO_PI * h


def drive_hamiltonian(cfg: SpinConfig, drive: Drive, t: float) -> np.ndarray:
    amp = drive.lab_amplitude
    return TWO_PI * amp * math.cos(TWO_PI * drive.carrier * t + drive.phase) * drive.operator()


def fix_phase(vec: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Make the largest-magnitude component real positive (ties go to the first index)."""
    mags = np.abs(vec)
    k = int(np.flatnonzero(mags >= mags.max() - atol)[0])
    return vec * (abs(vec[k]) / vec[k])


def zero_field_eigenbasis(cfg: SpinConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (|0>, |+>, |->) with |+-> = (|+1_z> +- |-1_z>)/sqrt(2)."""
    if cfg.e == 0:
        raise DegenerateBasisError("|+> and |-> are degenerate when E = 0")
    zero = np.array([0, 1, 0], dtype=complex)
    plus = np.array([1, 0, 1], dtype=complex) / SQRT2
    minus = np.array([1, 0, -1], dtype=complex) / SQRT2
    return zero, plus, minus


def eigenbasis(h: np.ndarray, reference: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a Hermitian matrix.

    Without ``reference`` the columns are sorted by ascending energy and phase
    fixed by :func:`fix_phase`. With a reference basis (columns), each column
    is matched to the eigenvector of largest overlap and its phase aligned so
    that the overlap is real positive; this keeps labels and signs continuous
    under small perturbations.
    """
    w, v = np.linalg.eigh(h)
    if reference is None:
        v = np.column_stack([fix_phase(v[:, k]) for k in range(v.shape[1])])
        return w, v
    ov = np.abs(reference.conj().T @ v) ** 2
    order = np.argmax(ov, axis=1)
    if len(set(order.tolist())) != len(order):
        raise ValueError("eigenvectors cannot be matched uniquely to the reference basis")
    w = w[order]
    v = v[:, order]
    for k in range(v.shape[1]):
        c = np.vdot(reference[:, k], v[:, k])
        v[:, k] *= abs(c) / c
    return w, v


# -- flat key-value configuration ------------------------------------------------

SPIN_KEYS = {
    "d_hz": "d",
    "e_hz": "e",
    "gamma_e_hz_per_t": "gamma_e",
    "d_parallel": "d_parallel",
    "d_perp": "d_perp",
    "dd_dt": "dd_dt",
    "de_dt": "de_dt",
}


def parse_decimal(text: str, key: str = "", line: int | None = None) -> Decimal:
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        where = f" (line {line})" if line is not None else ""
        raise ConfigError(f"key {key!r}{where}: cannot parse {text!r} as a number") from None
    if not value.is_finite():
        raise ConfigError(f"key {key!r}: value must be finite")
    return value


def read_kv(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def spin_config_from_kv(kv: dict[str, str]) -> SpinConfig:
    base = SpinConfig()
    vals = {
        "d": base.d,
        "e": base.e,
        "gamma_e": base.gamma_e,
        "d_parallel": base.d_parallel,
        "d_perp": base.d_perp,
        "dd_dt": base.dd_dt,
        "de_dt": base.de_dt,
    }
    for key, attr in SPIN_KEYS.items():
        if key in kv:
            vals[attr] = float(parse_decimal(kv[key], key))
    zfs = ZfsParams(vals.pop("d"), vals.pop("e"))
    return SpinConfig(zfs=zfs, **vals)


def spin_config_to_kv(cfg: SpinConfig) -> dict[str, str]:
    vals = {
        "d_hz": cfg.d,
        "e_hz": cfg.e,
        "gamma_e_hz_per_t": cfg.gamma_e,
        "d_parallel": cfg.d_parallel,
        "d_perp": cfg.d_perp,
        "dd_dt": cfg.dd_dt,
        "de_dt": cfg.de_dt,
    }
    # repr of a float is the shortest string that round-trips exactly
    return {k: repr(float(v)) for k, v in vals.items()}


def write_kv(kv: dict[str, str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))


__all__ = [
    "SX", "SY", "SZ", "SXX_MINUS_SYY", "SXY_PLUS_SYX", "TWO_PI",
    "ConfigError", "DegenerateBasisError",
    "ZfsParams", "SpinConfig", "FieldEnv", "Drive",
    "spin1_operators", "static_hamiltonian", "drive_hamiltonian", "apply_zfs_shifts",
    "zero_field_eigenbasis", "eigenbasis", "fix_phase",
    "read_kv", "write_kv", "spin_config_from_kv", "spin_config_to_kv", "parse_decimal",
]
