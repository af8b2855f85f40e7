"""Pulse sequences and the standard experiments on the dressed spin-1.

A shot is simulated in the static eigenbasis of that shot's Hamiltonian,
ordered (|0>, lower, upper), and in a frame rotating at (0, f_ref - f_d, f_ref)
where f_ref is the nominal |0> <-> upper frequency and f_d the dressing
carrier. The static part is therefore exact (all orders in field noise);
only drive terms are subject to the rotating-wave truncation.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.optimize import curve_fit

from .dynamics import (
    CollapseChannel,
    FourierHamiltonian,
    PropagationOptions,
    drive_terms,
    population,
    propagate,
    rotating_frame_hamiltonian,
)
from .floquet import nominal_basis, reference_frequency
from .noise import (
    DecayFit,
    NoiseModel,
    QuasiStaticSample,
    ensemble_average,
    fit_decay,
    sample_quasistatic,
    stream,
    with_rabi_path,
)
from .spinsys import (
    SX,
    SY,
    SZ,
    TWO_PI,
    Drive,
    FieldEnv,
    SpinConfig,
    ZfsParams,
    eigenbasis,
    static_hamiltonian,
)

SQRT2 = math.sqrt(2.0)


class InvalidSequenceError(ValueError):
    pass


class DriveOffPhaseError(RuntimeError):
    pass


# -- segments ---------------------------------------------------------------------


@dataclass(frozen=True)
class Init:
    fidelity: float = 1.0


@dataclass(frozen=True)
class MwPulse:
    drive: Drive
    duration: float


@dataclass(frozen=True)
class Wait:
    duration: float


@dataclass(frozen=True)
class DressingOn:
    drive: Drive


@dataclass(frozen=True)
class DressingOff:
    pass


@dataclass(frozen=True)
class Readout:
    state: str = "0"
    shots: int | None = None
    contrast: tuple[float, float] = (0.0, 1.0)  # signal = c0 + c1 * p


Segment = Union[Init, MwPulse, Wait, DressingOn, DressingOff, Readout]


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        self.validate()

    def validate(self) -> None:
        segs = self.segments
        if not segs or not isinstance(segs[0], Init):
            raise InvalidSequenceError("a sequence must begin with init")
        if not isinstance(segs[-1], Readout):
            raise InvalidSequenceError("a sequence must end with readout")
        on = False
        carriers = set()
        for k, s in enumerate(segs):
            if isinstance(s, (MwPulse, Wait)) and s.duration < 0:
                raise InvalidSequenceError(f"segment {k}: negative duration")
            if isinstance(s, Readout) and k != len(segs) - 1:
                raise InvalidSequenceError(f"segment {k}: readout must be last")
            if isinstance(s, Init) and k != 0:
                raise InvalidSequenceError(f"segment {k}: init must be first")
            if isinstance(s, DressingOn):
                if on:
                    raise InvalidSequenceError(f"segment {k}: dressing already on")
                on = True
                carriers.add(s.drive)
            if isinstance(s, DressingOff):
                if not on:
                    raise InvalidSequenceError(f"segment {k}: dressing_off without dressing_on")
                on = False
        if len(carriers) > 1:
            raise InvalidSequenceError("one dressing drive per sequence")

    @property
    def dressing(self) -> Drive | None:
        for s in self.segments:
            if isinstance(s, DressingOn):
                return s.drive
        return None

    def __add__(self, other):
        return PulseSequence(self.segments + tuple(other))


# -- a single shot ----------------------------------------------------------------


class Shot:
    """Mutable state of one experimental shot under one noise realization."""

    def __init__(
        self,
        cfg: SpinConfig,
        env: FieldEnv,
        dressing: Drive | None = None,
        opts: PropagationOptions | None = None,
        channels: Sequence[CollapseChannel] = (),
        sample: QuasiStaticSample | None = None,
    ):
        self.opts = opts or PropagationOptions()
        if self.opts.frame != "rotating":
            raise ValueError("shots are simulated in the rotating frame")
        self.sample = sample or QuasiStaticSample()
        w_nom, v_nom = nominal_basis(cfg, env)
        s = self.sample
        cfg_act = cfg
        if s.dD or s.dE:
            cfg_act = replace(cfg, zfs=ZfsParams(cfg.d + s.dD, cfg.e + s.dE))
        w, v = eigenbasis(static_hamiltonian(cfg_act, env.shifted(s.dB)), v_nom)
        self.energies = w
        self.basis = v
        self.f_ref = (w_nom[2] - w_nom[0]) / TWO_PI
        if dressing is not None:
            dressing = dressing.with_(carrier=dressing.carrier * (1.0 + s.osc_rel))
            f_d = dressing.carrier
        else:
            f_d = (w_nom[2] - w_nom[1]) / TWO_PI
        self.dressing = dressing
        self.frame = np.array([0.0, self.f_ref - f_d, self.f_ref])
        self.channels = [
            CollapseChannel(v.conj().T @ c.operator @ v, c.rate) for c in channels
        ]
        self.rho: np.ndarray | None = None
        self.t = 0.0
        self.on = False
        self._cache: dict = {}

    def copy(self) -> "Shot":
        new = object.__new__(Shot)
        new.__dict__.update(self.__dict__)
        new.rho = None if self.rho is None else self.rho.copy()
        return new

    # operators and states in the working basis
    def op(self, m: np.ndarray) -> np.ndarray:
        return self.basis.conj().T @ m @ self.basis

    def state(self, label: str) -> np.ndarray:
        e = np.eye(3, dtype=complex)
        if label in ("0", "-", "+"):
            return e[{"0": 0, "-": 1, "+": 2}[label]]
        if label in ("+1", "-1"):
            if self.dressing is None:
                raise ValueError("dressed states need a dressing drive")
            alpha = np.angle(self.op(self.dressing.operator())[2, 1]) - self.dressing.phase
            sign = 1.0 if label == "+1" else -1.0
            return (e[2] + sign * np.exp(-1j * alpha) * e[1]) / SQRT2
        raise ValueError(f"unknown state label {label!r}")

    def hamiltonian(self, t: float, pulse: Drive | None = None) -> FourierHamiltonian:
        factor = (1.0 + self.sample.rabi_at(t)) if (self.on and self.dressing is not None) else None
        key = (factor, pulse)
        h = self._cache.get(key)
        if h is None:
            lab = FourierHamiltonian(np.diag(self.energies).astype(complex), [])
            if factor is not None:
                d = self.dressing
                lab.terms += drive_terms(self.op(d.operator()), TWO_PI * d.lab_amplitude * factor, d.carrier, d.phase)
            if pulse is not None:
                lab.terms += drive_terms(self.op(pulse.operator()), TWO_PI * pulse.lab_amplitude, pulse.carrier, pulse.phase)
            h = rotating_frame_hamiltonian(lab, self.frame, rwa=self.opts.rwa)
            self._cache[key] = h
        return h

    def rotating_static(self) -> np.ndarray:
        """Time-independent part of the current rotating-frame Hamiltonian (rad/s)."""
        return self.hamiltonian(self.t).static

    def _evolve(self, duration: float, pulse: Drive | None = None) -> None:
        t_end = self.t + duration
        cuts = [self.t]
        path = self.sample.rabi_path
        if self.on and path is not None:
            knots = path[0]
            cuts += [k for k in knots if self.t < k < t_end]
        cuts.append(t_end)
        for a, b in zip(cuts[:-1], cuts[1:]):
            self.rho = propagate(self.hamiltonian(a, pulse), self.channels, self.rho, a, b, self.opts)
        self.t = t_end

    def apply(self, seg: Segment):
        if isinstance(seg, Init):
            f = seg.fidelity
            self.rho = np.diag([f, (1 - f) / 2, (1 - f) / 2]).astype(complex)
            self.t = 0.0
            self.on = False
        elif self.rho is None:
            raise InvalidSequenceError("shot not initialized")
        elif isinstance(seg, DressingOn):
            if self.dressing is None or seg.drive.channel != self.dressing.channel:
                raise InvalidSequenceError("dressing drive does not match the shot")
            self.on = True
        elif isinstance(seg, DressingOff):
            d = self.dressing
            if not self.on or d is None or d.carrier <= 0:
                raise DriveOffPhaseError("carrier phase undefined at dressing turn-off")
            # terminate at the next zero of cos(2 pi f t + phase)
            theta = TWO_PI * d.carrier * self.t + d.phase
            k = math.ceil((theta - math.pi / 2) / math.pi - 1e-12)
            t_zero = (math.pi / 2 + k * math.pi - d.phase) / (TWO_PI * d.carrier)
            self._evolve(max(0.0, t_zero - self.t))
            self.on = False
        elif isinstance(seg, Wait):
            self._evolve(seg.duration)
        elif isinstance(seg, MwPulse):
            self._evolve(seg.duration, seg.drive)
        elif isinstance(seg, Readout):
            return self.readout(seg)
        else:
            raise InvalidSequenceError(f"unknown segment {seg!r}")
        return None

    def run(self, segments: Sequence[Segment], rng: np.random.Generator | None = None):
        out = None
        for seg in segments:
            out = self.readout(seg, rng) if isinstance(seg, Readout) else self.apply(seg)
        return out

    def population(self, label: str | np.ndarray) -> float:
        psi = self.state(label) if isinstance(label, str) else label
        return population(self.rho, psi)

    def readout(self, seg: Readout, rng: np.random.Generator | None = None) -> float:
        p = self.population(seg.state)
        if seg.shots is not None:
            if rng is None:
                raise ValueError("shot-noise sampling needs an rng")
            p = rng.binomial(seg.shots, p) / seg.shots
        c0, c1 = seg.contrast
        return c0 + c1 * p


def run_sequence(
    seq: PulseSequence,
    cfg: SpinConfig,
    env: FieldEnv,
    opts: PropagationOptions | None = None,
    sample: QuasiStaticSample | None = None,
    rng: np.random.Generator | None = None,
    channels: Sequence[CollapseChannel] = (),
) -> float:
    """Execute a sequence and return the readout value."""
    if not isinstance(seq, PulseSequence):
        seq = PulseSequence(tuple(seq))
    shot = Shot(cfg, env, seq.dressing, opts, channels, sample)
    return shot.run(seq.segments, rng)


# -- results ----------------------------------------------------------------------


@dataclass
class ExperimentResult:
    x: np.ndarray
    signal: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.x.shape == self.signal.shape == self.sigma.shape):
            raise ValueError("x, signal and sigma must have equal lengths")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    def __len__(self):
        return self.x.size

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "signal", "sigma"])
            for row in zip(self.x, self.signal, self.sigma):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, meta: dict | None = None) -> "ExperimentResult":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cols = {k: [float(r[k]) for r in rows] for k in ("x", "signal", "sigma")}
        return cls(cols["x"], cols["signal"], cols["sigma"], meta or {})


# -- experiment setups --------------------------------------------------------------

TRANSITIONS = ("0-+", "0--", "+--", "0-+1", "0--1", "+1--1")


@dataclass(frozen=True)
class Setup:
    """Nominal operating point plus default pulse strengths.

    ``rabi`` is the dressing Rabi frequency (0 means undressed). Dressed
    magnetic probes default to Omega/sqrt(143), for which a resonant pi pulse
    on one dressed line is six full cycles on the other; the weak probe also
    keeps the two-photon leakage through |0> near (r/Omega)^2/4.
    """

    cfg: SpinConfig = field(default_factory=SpinConfig)
    env: FieldEnv = field(default_factory=FieldEnv)
    rabi: float = 350e3
    dressing_phase: float = 0.0
    pulse_rabi: float = 1e6
    probe_rabi: float | None = None
    electric_rabi: float = 25e3
    init_fidelity: float = 1.0
    opts: PropagationOptions = field(default_factory=PropagationOptions)
    channels: tuple = ()

    @property
    def dressing(self) -> Drive | None:
        if self.rabi <= 0:
            return None
        return Drive("magnetic-z", carrier=2.0 * self.cfg.e, rabi=self.rabi, phase=self.dressing_phase)

    @property
    def dressed_probe_rabi(self) -> float:
        return self.probe_rabi if self.probe_rabi is not None else self.rabi / math.sqrt(143.0)

    def shot(self, sample: QuasiStaticSample | None = None) -> Shot:
        return Shot(self.cfg, self.env, self.dressing, self.opts, self.channels, sample)

    @cached_property
    def _nominal(self) -> dict:
        s = self.shot()
        w = s.energies
        out = {
            "0-+": ((w[2] - w[0]) / TWO_PI, "magnetic-x", abs(s.op(SX)[2, 0])),
            "0--": ((w[1] - w[0]) / TWO_PI, "magnetic-y", abs(s.op(SY)[1, 0])),
            "+--": ((w[2] - w[1]) / TWO_PI, "magnetic-z", abs(s.op(SZ)[2, 1])),
        }
        if self.dressing is not None:
            s.on = True
            lam, vec = np.linalg.eigh(s.rotating_static())
            idx = {}
            for label in ("0", "+1", "-1"):
                ov = np.abs(s.state(label).conj() @ vec) ** 2
                idx[label] = int(np.argmax(ov))
            e0 = lam[idx["0"]]
            sx = s.op(SX)
            oe = s.op(Drive("electric", 0.0, 0.0).operator())
            vp, vm, v0 = vec[:, idx["+1"]], vec[:, idx["-1"]], vec[:, idx["0"]]
            out["0-+1"] = (s.f_ref + (lam[idx["+1"]] - e0) / TWO_PI, "magnetic-x", abs(vp.conj() @ sx @ v0))
            out["0--1"] = (s.f_ref + (lam[idx["-1"]] - e0) / TWO_PI, "magnetic-x", abs(vm.conj() @ sx @ v0))
            out["+1--1"] = ((lam[idx["+1"]] - lam[idx["-1"]]) / TWO_PI, "electric", abs(vp.conj() @ oe @ vm))
        return out

    def transition(self, name: str) -> tuple[float, str, float]:
        """(carrier Hz, channel, coupling) of a named transition at the nominal point."""
        try:
            return self._nominal[name]
        except KeyError:
            raise ValueError(f"transition {name!r} unavailable for this setup") from None

    @property
    def dressed_splitting(self) -> float:
        return self.transition("+1--1")[0]

    def default_rabi(self, name: str) -> float:
        if name in ("0-+1", "0--1"):
            return self.dressed_probe_rabi
        if name == "+1--1":
            return self.electric_rabi
        return self.pulse_rabi

    def drive(self, name: str, phase: float = 0.0, detuning: float = 0.0, rabi: float | None = None) -> Drive:
        f, channel, coupling = self.transition(name)
        return Drive(channel, f + detuning, self.default_rabi(name) if rabi is None else rabi, phase, coupling)

    def pulse(self, name: str, angle: float, phase: float = 0.0, detuning: float = 0.0, rabi: float | None = None) -> MwPulse:
        d = self.drive(name, phase, detuning, rabi)
        return MwPulse(d, angle / (TWO_PI * d.rabi))


BASES = ("dps", "zero-field", "zeeman")


def standard_setup(basis: str, cfg: SpinConfig | None = None, **kw) -> Setup:
    """Operating points of the three comparison bases.

    dps: B = 0 with the 350 kHz dressing drive; zero-field: B = 0 undressed;
    zeeman: Bz = 1.2 mT undressed, with pulses fast against the linear
    Zeeman inhomogeneity.
    """
    cfg = cfg or SpinConfig()
    if basis == "dps":
        base = dict(cfg=cfg, rabi=350e3)
    elif basis == "zero-field":
        base = dict(cfg=cfg, rabi=0.0, pulse_rabi=1e6)
    elif basis == "zeeman":
        base = dict(cfg=cfg, rabi=0.0, env=FieldEnv(B=(0.0, 0.0, 1.2e-3)), pulse_rabi=5e6)
    else:
        raise ValueError(f"unknown basis {basis!r}")
    base.update(kw)
    return Setup(**base)


def _basis_transition(basis: str) -> tuple[str, str]:
    """(qubit transition, readout label of the initial qubit state)."""
    return ("+1--1", "+1") if basis == "dps" else ("0-+", "0")


# -- DPS preparation and readout ------------------------------------------------------


def dps_prepare(setup: Setup, phi: float = 0.0, detuning: float = 0.0) -> list[Segment]:
    """Init, dressing on, pi on |0>-|+1>, pi/2 on the electric |+1>-|-1> line.

    The electric pulse phase is chosen so the state is (|+1> + e^{i phi}|-1>)/sqrt(2)
    in the frame co-rotating with the electric carrier.
    """
    if setup.dressing is None:
        raise ValueError("DPS preparation needs the dressing drive")
    return [
        Init(setup.init_fidelity),
        DressingOn(setup.dressing),
        setup.pulse("0-+1", math.pi),
        setup.pulse("+1--1", math.pi / 2, phase=phi + math.pi / 2, detuning=detuning),
    ]


def dps_readout(setup: Setup, state: str = "+1") -> list[Segment]:
    """Map a dressed population onto |0> and read it out.

    Dressing off at a carrier zero, pi/2 on |+>-|-> rotating the chosen
    dressed state onto |+>, then pi on |0>-|+> and readout of |0>.
    """
    if state not in ("+1", "-1"):
        raise ValueError("state must be '+1' or '-1'")
    dphase = setup.dressing_phase
    phase = dphase - math.pi / 2 if state == "+1" else dphase + math.pi / 2
    return [
        DressingOff(),
        setup.pulse("+--", math.pi / 2, phase=phase),
        setup.pulse("0-+", math.pi),
        Readout("0"),
    ]


# -- experiments --------------------------------------------------------------------


def _result(x, runs, meta, sigma=None):
    sig = np.zeros(len(x)) if sigma is None else sigma
    return ExperimentResult(np.asarray(x, float), np.asarray(runs, float), sig, meta)


def odmr_scan(
    setup: Setup,
    deltas: Sequence[float],
    probe_rabi: float | None = None,
    probe_duration: float | None = None,
    readout: str = "0",
) -> ExperimentResult:
    """Pulsed ODMR: probe pulse swept in detuning from the undriven |0>-|+> line.

    The probe is a magnetic-x pulse; ``probe_rabi`` is its Rabi frequency on
    a dressed |0>-|+-1> line (on |0>-|+> when undressed), by default Omega/35
    (10 kHz undressed). Default duration is that line's pi time.
    """
    f0 = reference_frequency(setup.cfg)
    name = "0-+1" if setup.dressing is not None else "0-+"
    _, channel, coupling = setup.transition(name)
    if probe_rabi is None:
        probe_rabi = setup.rabi / 35.0 if setup.dressing is not None else 10e3
    r = probe_rabi
    if setup.dressing is not None and r > setup.rabi / 5 + 1e-9:
        raise ValueError("probe Rabi frequency must not exceed Omega/5")
    dur = 1.0 / (2.0 * r) if probe_duration is None else probe_duration
    base = setup.shot()
    head = [Init(setup.init_fidelity)] + ([DressingOn(setup.dressing)] if setup.dressing else [])
    base.run(head)
    sig = []
    for d in deltas:
        s = base.copy()
        s.apply(MwPulse(Drive(channel, f0 + d, r, 0.0, coupling), dur))
        sig.append(s.population(readout))
    return _result(deltas, sig, {"experiment": "odmr", "reference_hz": f0, "probe_rabi": r, "probe_duration": dur})


def resonance_dips(x: Sequence[float], y: Sequence[float], n: int = 2, baseline: float | None = None):
    """Locate the ``n`` deepest dips; returns [(center, fwhm, depth)] sorted by center.

    Centers are refined by a parabola through the three lowest samples, widths
    by linear interpolation at half depth.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    base = float(np.max(y)) if baseline is None else baseline
    minima = [k for k in range(1, len(y) - 1) if y[k] <= y[k - 1] and y[k] < y[k + 1]]
    minima.sort(key=lambda k: y[k])
    out = []
    for k in minima[:n]:
        x0, x1, x2 = x[k - 1 : k + 2]
        y0, y1, y2 = y[k - 1 : k + 2]
        denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
        a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
        b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
        c = -b / (2 * a) if a > 0 else x1
        ymin = float(np.min(y[k - 1 : k + 2]))
        half = base - (base - ymin) / 2
        lo = k
        while lo > 0 and y[lo] < half:
            lo -= 1
        hi = k
        while hi < len(y) - 1 and y[hi] < half:
            hi += 1
        xl = np.interp(half, [y[lo + 1], y[lo]], [x[lo + 1], x[lo]]) if y[lo] >= half else x[lo]
        xr = np.interp(half, [y[hi - 1], y[hi]], [x[hi - 1], x[hi]]) if y[hi] >= half else x[hi]
        out.append((float(c), float(xr - xl), float(base - ymin)))
    return sorted(out)


def rabi_experiment(
    setup: Setup,
    transition: str,
    durations: Sequence[float],
    rabi: float | None = None,
    readout: str | None = None,
) -> ExperimentResult:
    """Population versus drive duration.

    |0>-|+-1> start from |0> with dressing on and read |0> by default; the
    electric |+1>-|-1> line starts from |+1> (after a dressed pi pulse) and
    reads |+1>.
    """
    if transition not in ("0-+1", "0--1", "+1--1", "0-+"):
        raise ValueError(f"unsupported Rabi transition {transition!r}")
    head: list[Segment] = [Init(setup.init_fidelity)]
    if setup.dressing is not None:
        head.append(DressingOn(setup.dressing))
    if transition == "+1--1":
        head.append(setup.pulse("0-+1", math.pi))
        readout = readout or "+1"
    else:
        readout = readout or "0"
    drive = setup.drive(transition, rabi=rabi)
    base = setup.shot()
    base.run(head)
    sig = []
    for t in durations:
        s = base.copy()
        s.apply(MwPulse(drive, t))
        sig.append(s.population(readout))
    return _result(durations, sig, {"experiment": "rabi", "transition": transition, "rabi": drive.rabi, "readout": readout})


def fit_oscillation(t: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Fit ``a + b cos(2 pi f t + phi)``; returns (f, sd of f)."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    from .noise import _fringe_guess

    f0 = _fringe_guess(t, y)
    model = lambda t, a, b, f, p: a + b * np.cos(2 * np.pi * f * t + p)  # noqa: E731
    best = None
    for p0 in (0.0, math.pi / 2, math.pi, -math.pi / 2):
        try:
            popt, pcov = curve_fit(model, t, y, p0=[y.mean(), np.ptp(y) / 2, f0, p0], maxfev=20000)
        except RuntimeError:
            continue
        cost = np.sum((model(t, *popt) - y) ** 2)
        if best is None or cost < best[0]:
            best = (cost, popt, pcov)
    if best is None:
        raise RuntimeError("oscillation fit failed")
    return float(abs(best[1][2])), float(np.sqrt(best[2][2, 2]))


def _ramsey_segments(setup, basis, detuning, phi):
    """Preparation segments and a factory for the closing pulse plus readout."""
    q, start = _basis_transition(basis)
    if basis == "dps":
        head = dps_prepare(setup, phi, detuning)
        close = math.pi / 2
    else:
        head = [Init(setup.init_fidelity), setup.pulse(q, math.pi / 2, phase=phi, detuning=detuning)]
        close = 0.0

    def tail(extra=0.0):
        return [setup.pulse(q, math.pi / 2, phase=close + extra, detuning=detuning), Readout(start)]

    return head, tail


def _single_ramsey(setup, basis, detuning, taus, phi, sample, rng=None, path=None, mode="carrier", path_knots=200):
    if mode == "carrier":
        head, tail = _ramsey_segments(setup, basis, detuning, phi)
    else:
        head, tail = _ramsey_segments(setup, basis, 0.0, phi)
    if path is not None and rng is not None:
        t_end = max(taus) + 1e-3
        sample = with_rabi_path(sample, path, t_end, path_knots, rng)
    base = setup.shot(sample)
    base.run(head)
    sig = []
    for tau in taus:
        s = base.copy()
        s.apply(Wait(tau))
        extra = 0.0 if mode == "carrier" else -TWO_PI * detuning * tau
        sig.append(s.run(tail(extra), rng))
    return sig


def _run_ensemble(single, x, meta, noise, n_samples, seed, n_jobs):
    if noise is None or noise.is_zero:
        sig = single(None, None)
        return _result(x, sig, dict(meta, seed=int(seed), n_samples=1))

    def member(sample, rng):
        return ExperimentResult(x, single(sample, rng), np.zeros(len(x)), meta)

    return ensemble_average(member, noise, n_samples, seed, n_jobs)


def ramsey_experiment(
    setup: Setup,
    basis: str,
    detuning: float,
    taus: Sequence[float],
    noise: NoiseModel | None = None,
    n_samples: int = 100,
    seed: int = 0,
    phi: float = 0.0,
    n_jobs: int = 1,
    mode: str = "carrier",
) -> ExperimentResult:
    """Ramsey free precession with an artificial detuning of the qubit drive.

    In ``carrier`` mode both pulses are detuned; in ``phase`` mode the pulses
    are resonant and the closing pulse phase advances by 2 pi detuning tau,
    which keeps pulse fidelity when the detuning is large. ``phi`` is the
    phase of the prepared superposition; the closing pulse is fixed.

    ``basis`` selects the qubit: dps (|+1>,|-1>, electric pulses, readout of
    |+1>), zero-field or zeeman (|0>,upper, magnetic pulses, readout of |0>).
    With a noise model the signal is the ensemble mean over quasi-static
    draws; a finite ``omega_drift.tau_corr`` adds a within-shot drift path.
    """
    taus = np.asarray(taus, float)
    path = noise.omega_drift if noise is not None and math.isfinite(noise.omega_drift.tau_corr) else None
    if mode not in ("carrier", "phase"):
        raise ValueError(f"unknown detuning mode {mode!r}")
    meta = {"experiment": "ramsey", "basis": basis, "detuning_hz": detuning, "phi": phi, "mode": mode}

    def single(sample, rng):
        return _single_ramsey(setup, basis, detuning, taus, phi, sample, rng, path, mode)

    return _run_ensemble(single, taus, meta, noise, n_samples, seed, n_jobs)


def hahn_echo_experiment(
    setup: Setup,
    basis: str,
    taus: Sequence[float],
    noise: NoiseModel | None = None,
    n_samples: int = 100,
    seed: int = 0,
    refocus: bool = True,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Echo: pi/2, tau/2, pi, tau/2, pi/2, all about the same axis.

    The pulses compose to the identity, so the signal is the return
    probability to the initial qubit state. Without the refocusing pulse the
    sequence is the zero-detuning Ramsey experiment.
    """
    taus = np.asarray(taus, float)
    q, start = _basis_transition(basis)
    path = noise.omega_drift if noise is not None and math.isfinite(noise.omega_drift.tau_corr) else None
    meta = {"experiment": "echo", "basis": basis, "refocus": refocus}
    ph = math.pi / 2 if basis == "dps" else 0.0
    if basis == "dps":
        head = dps_prepare(setup, 0.0, 0.0)
    else:
        head = [Init(setup.init_fidelity), setup.pulse(q, math.pi / 2, phase=ph)]
    pi_pulse = setup.pulse(q, math.pi, phase=ph)
    tail = [setup.pulse(q, math.pi / 2, phase=ph), Readout(start)]

    def single(sample, rng):
        if path is not None and rng is not None:
            sample = with_rabi_path(sample, path, max(taus) + 1e-3, 200, rng)
        base = setup.shot(sample)
        base.run(head)
        sig = []
        for tau in taus:
            s = base.copy()
            if refocus:
                s.run([Wait(tau / 2), pi_pulse, Wait(tau / 2)])
            else:
                s.apply(Wait(tau))
            sig.append(s.run(tail, rng))
        return sig

    return _run_ensemble(single, taus, meta, noise, n_samples, seed, n_jobs)


def qubit_frequencies(setup: Setup, basis: str, noise: NoiseModel, n: int = 400, seed: int = 0) -> np.ndarray:
    """Qubit frequency (Hz) of ``n`` quasi-static draws, from static spectra only."""
    vals = []
    for i in range(n):
        sample = sample_quasistatic(noise, stream(seed, 10_000_019, i))
        s = setup.shot(sample)
        if basis == "dps":
            s.on = True
            lam, vec = np.linalg.eigh(s.rotating_static())
            ip = int(np.argmax(np.abs(s.state("+1").conj() @ vec)))
            im = int(np.argmax(np.abs(s.state("-1").conj() @ vec)))
            vals.append((lam[ip] - lam[im]) / TWO_PI)
        else:
            vals.append((s.energies[2] - s.energies[0]) / TWO_PI)
    return np.asarray(vals)


def transition_spread(setup: Setup, basis: str, noise: NoiseModel, n: int = 400, seed: int = 0) -> tuple[float, float]:
    """Median and robust width (Hz) of the qubit frequency over quasi-static draws.

    The width is half the 16-84 percentile range, which equals the SD for
    Gaussian spreads but ignores the heavy tails of shifts that are quadratic
    or quartic in the field.
    """
    q16, q50, q84 = np.percentile(qubit_frequencies(setup, basis, noise, n, seed), [16, 50, 84])
    return float(q50), float((q84 - q16) / 2)


def envelope_time(freqs: np.ndarray, level: float = 1 / math.e, t_max: float = 10.0) -> float:
    """First time at which ``|<exp(2 pi i f t)>|`` over the samples falls to ``level``.

    Returns ``inf`` if it stays above ``level`` up to ``t_max``.
    """
    f = np.asarray(freqs, float)
    f = f - np.median(f)
    spread = np.ptp(f)
    if spread == 0:
        return math.inf
    t = np.geomspace(1e-3 / spread, t_max, 4000)
    env = np.abs(np.exp(2j * np.pi * np.outer(t, f)).mean(axis=1))
    below = np.flatnonzero(env <= level)
    if below.size == 0:
        return math.inf
    k = below[0]
    if k == 0:
        return float(t[0])
    return float(np.interp(level, [env[k], env[k - 1]], [t[k], t[k - 1]]))


def ramsey_t2star(
    setup: Setup,
    basis: str,
    noise: NoiseModel,
    n_samples: int = 200,
    seed: int = 0,
    n_points: int = 41,
    n_jobs: int = 1,
    span_factor: float = 2.5,
    fringes: float = 4.5,
    t_max: float = 1.0,
) -> tuple[ExperimentResult, DecayFit]:
    """Ensemble Ramsey on a grid scaled to the expected dephasing time, then fitted.

    The scan spans ``span_factor`` times the 1/e time of the quasi-static
    envelope predicted by :func:`envelope_time` (capped at ``t_max``), with
    a phase-mode artificial detuning giving about ``fringes`` fringes over
    the scan. The prediction only places the grid; T2* comes from the fit.
    """
    freqs = qubit_frequencies(setup, basis, noise, seed=seed)
    t_e = min(envelope_time(freqs, t_max=t_max), t_max / span_factor)
    taus = np.linspace(0.0, span_factor * t_e, n_points)
    det = fringes / taus[-1]
    res = ramsey_experiment(setup, basis, det, taus, noise, n_samples, seed, n_jobs=n_jobs, mode="phase")
    return res, fit_decay(res, "ramsey")
