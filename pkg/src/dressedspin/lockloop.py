"""Active feedback on the dressed-spin resonance.

The dressed splitting follows the dressing Rabi frequency one-to-one, so a
slow drift of the dressing amplitude appears as a detuning of the
|+1> <-> |-1> drive. A two-quadrature Ramsey measurement estimates that
detuning and a proportional controller adds a corrective offset to the
drive frequency. Residual detuning is ``true + corrective``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .noise import DecayFit, DriftParams, drift_trace, fit_decay, stream
from .sequences import ExperimentResult

TWO_PI = 2 * math.pi


class LockInstabilityError(RuntimeError):
    pass


class PhaseWrapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Plant:
    """Drifting dressing drive.

    ``rabi_drift`` acts on the Rabi frequency (first order in the splitting);
    ``osc_drift`` on the dressing carrier, whose detuning enters the dressed
    splitting as sqrt(Omega^2 + delta^2) - Omega.
    """

    base_rabi: float = 350e3
    rabi_drift: DriftParams = field(default_factory=lambda: DriftParams(1e-4, 6 * 3600.0))
    osc_drift: DriftParams = field(default_factory=DriftParams)
    wall_clock: float = 0.0
    carrier: float = 2 * 18.353164e6

    def __post_init__(self):
        if not self.base_rabi > 0:
            raise ValueError("base_rabi must be positive")

    def detuning(self, times: Sequence[float], rng: np.random.Generator) -> np.ndarray:
        """Drift of the dressed splitting (Hz) sampled on an ascending time grid."""
        t = np.asarray(times, float) + self.wall_clock
        d_rabi = drift_trace(self.rabi_drift, self.base_rabi, t, rng) - self.base_rabi
        d_osc = drift_trace(self.osc_drift, self.carrier, t, rng) - self.carrier
        om = self.base_rabi + d_rabi
        return d_rabi + (np.sqrt(om**2 + d_osc**2) - om)


@dataclass(frozen=True)
class Controller:
    k_p: float = 0.5
    tau_fb: float = 2e-3
    update_period: float = 60.0
    shots_per_update: int = 1000
    contrast: float = 1.0

    def __post_init__(self):
        if not 0 < self.k_p < 2:
            raise ValueError("k_p must lie in (0, 2)")
        if not self.tau_fb > 0 or not self.update_period > 0:
            raise ValueError("tau_fb and update_period must be positive")
        if self.shots_per_update < 1:
            raise ValueError("shots_per_update must be at least 1")
        if not 0 < self.contrast <= 1:
            raise ValueError("contrast must lie in (0, 1]")


def quadrature_probabilities(detuning: float, tau: float, contrast: float = 1.0) -> tuple[float, float]:
    """Bright-state probabilities after closing pi/2 pulses of phase 0 and pi/2."""
    theta = TWO_PI * detuning * tau
    return 0.5 * (1 + contrast * math.cos(theta)), 0.5 * (1 + contrast * math.sin(theta))


def error_signal(detuning: float, controller: Controller, rng: np.random.Generator | None = None) -> float:
    """Two-quadrature Ramsey estimate (Hz) of a residual detuning.

    Precession for ``tau_fb`` from (|+1> + |-1>)/sqrt(2), then closing pulses
    of phase 0 and pi/2 give I and Q; the estimate is atan2(Q, I)/(2 pi tau_fb).
    With ``rng`` each quadrature is sampled with ``shots_per_update`` shots;
    without, the exact probabilities are used.
    """
    c = controller
    p_i, p_q = quadrature_probabilities(detuning, c.tau_fb, c.contrast)
    if rng is not None:
        n = c.shots_per_update
        p_i = rng.binomial(n, p_i) / n
        p_q = rng.binomial(n, p_q) / n
    est = math.atan2(2 * p_q - 1, 2 * p_i - 1) / (TWO_PI * c.tau_fb)
    if abs(est) * c.tau_fb > 0.4:
        warnings.warn(f"error signal near phase wrap: {est:.3g} Hz at tau_fb={c.tau_fb:g} s", PhaseWrapWarning)
    return est


@dataclass
class LockTrace:
    time: np.ndarray
    corrective: np.ndarray
    residual: np.ndarray
    enabled: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, float)
        self.corrective = np.asarray(self.corrective, float)
        self.residual = np.asarray(self.residual, float)
        self.enabled = np.asarray(self.enabled, bool)
        n = self.time.size
        if not (self.corrective.size == self.residual.size == self.enabled.size == n):
            raise ValueError("trace columns must have equal lengths")
        if not np.all(np.isfinite(self.residual)):
            raise ValueError("residual must be finite")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "corrective_hz", "residual_hz", "enabled"])
            for t, c, r, e in zip(self.time, self.corrective, self.residual, self.enabled):
                w.writerow([repr(float(t)), repr(float(c)), repr(float(r)), int(e)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LockTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [float(r["time_s"]) for r in rows],
            [float(r["corrective_hz"]) for r in rows],
            [float(r["residual_hz"]) for r in rows],
            [bool(int(r["enabled"])) for r in rows],
        )


Schedule = Union[bool, Sequence[bool], Callable[[float], bool]]


def _schedule(enabled: Schedule, times: np.ndarray) -> np.ndarray:
    if callable(enabled):
        return np.array([bool(enabled(t)) for t in times])
    if isinstance(enabled, (bool, np.bool_)):
        return np.full(times.size, bool(enabled))
    out = np.asarray(enabled, bool)
    if out.size != times.size:
        raise ValueError("enabled schedule must have one entry per update")
    return out


def feedback_run(
    plant: Plant,
    controller: Controller,
    duration: float,
    enabled: Schedule = True,
    rng: np.random.Generator | None = None,
    drift: np.ndarray | None = None,
    initial_corrective: float = 0.0,
    noiseless: bool = False,
) -> LockTrace:
    """Run the discrete proportional loop for ``duration`` seconds.

    Updates happen every ``update_period``; the trace records, at each update
    time, the residual seen by the measurement and the corrective offset
    after the update. While disabled the corrective offset is frozen.
    ``drift`` may supply precomputed plant detunings on the update grid so
    several runs can share one realization. ``noiseless`` uses exact
    quadratures instead of shot sampling.
    """
    n = int(math.floor(duration / controller.update_period + 1e-9)) + 1
    if n < 11:
        raise ValueError("duration must cover at least 10 update periods")
    rng = rng if rng is not None else np.random.default_rng(0)
    times = np.arange(n) * controller.update_period
    delta = plant.detuning(times, rng) if drift is None else np.asarray(drift, float)
    if delta.size != n:
        raise ValueError("drift must have one value per update")
    on = _schedule(enabled, times)
    corr = np.empty(n)
    resid = np.empty(n)
    c = initial_corrective
    grow = 0
    for k in range(n):
        r = delta[k] + c
        resid[k] = r
        if on[k]:
            est = error_signal(r, controller, None if noiseless else rng)
            c -= controller.k_p * est
            if k > 0 and on[k - 1] and abs(r) > 1.01 * abs(resid[k - 1]) and abs(r) > 0:
                grow += 1
                if grow >= 20:
                    raise LockInstabilityError(f"residual grew for 20 consecutive updates (|r| = {abs(r):.3g} Hz)")
            else:
                grow = 0
        else:
            grow = 0
        corr[k] = c
    return LockTrace(times + plant.wall_clock, corr, resid, on)


@dataclass(frozen=True)
class RamseySettings:
    """Per-iteration DPS Ramsey used to integrate T2* over a drifting run."""

    taus: tuple = tuple(np.linspace(0.0, 60e-3, 121))
    detuning: float = 100.0
    t2_intrinsic: float = 22.4e-3
    n_intrinsic: float = 2.0
    contrast: float = 1.0
    iterations: int = 60


def integrated_ramsey(residuals: Sequence[float], settings: RamseySettings) -> ExperimentResult:
    """Average of per-iteration Ramsey traces, each offset by its residual detuning."""
    t = np.asarray(settings.taus, float)
    env = settings.contrast * np.exp(-((t / settings.t2_intrinsic) ** settings.n_intrinsic))
    r = np.asarray(residuals, float)[:, None]
    traces = 0.5 + 0.5 * env * np.cos(TWO_PI * (settings.detuning + r) * t)
    sd = traces.std(axis=0, ddof=1) if r.shape[0] > 1 else np.zeros(t.size)
    return ExperimentResult(t, traces.mean(axis=0), sd, {"experiment": "integrated-ramsey", "iterations": int(r.shape[0])})


def open_vs_closed_t2star(
    plant: Plant,
    controller: Controller,
    ramsey: RamseySettings = RamseySettings(),
    total_time: float = 3600.0,
    seed: int = 0,
    noiseless: bool = False,
) -> tuple[DecayFit, DecayFit]:
    """Integrated-Ramsey T2* with feedback on and off over one drift realization.

    Both runs share the plant drift and start locked (zero residual). The
    closed loop keeps updating; the open loop freezes the initial correction.
    Ramsey iterations are spread uniformly over ``total_time``.
    ``noiseless`` removes the error-signal shot noise.
    """
    rng = stream(seed, 0)
    n = int(math.floor(total_time / controller.update_period + 1e-9)) + 1
    times = np.arange(n) * controller.update_period
    delta = plant.detuning(times, rng)
    c0 = -float(delta[0])
    closed = feedback_run(plant, controller, total_time, True, stream(seed, 1), delta, c0, noiseless)
    opened = feedback_run(plant, controller, total_time, False, stream(seed, 1), delta, c0)
    pick = np.linspace(0, n - 1, ramsey.iterations).round().astype(int)
    fits = []
    for trace in (closed, opened):
        res = integrated_ramsey(trace.residual[pick], ramsey)
        fits.append(fit_decay(res, "ramsey", freq_guess=ramsey.detuning))
    return fits[0], fits[1]
