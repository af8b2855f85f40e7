"""Quasi-static noise, slow drifts, ensemble averaging and decay fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .spinsys import ConfigError, parse_decimal


class FitError(RuntimeError):
    pass


class FitBoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DriftParams:
    """Mean-reverting drift with stationary relative SD ``sigma_rel``.

    ``tau_corr = inf`` makes the process quasi-static: one value per shot.
    """

    sigma_rel: float = 0.0
    tau_corr: float = math.inf

    def __post_init__(self):
        if self.sigma_rel < 0:
            raise ConfigError("sigma_rel must be non-negative")
        if not self.tau_corr > 0:
            raise ConfigError("tau_corr must be positive")


@dataclass(frozen=True)
class NoiseModel:
    sigma_b: float = 0.0  # T, per axis
    sigma_d: float = 0.0  # Hz
    sigma_e: float = 0.0  # Hz
    omega_drift: DriftParams = field(default_factory=DriftParams)
    osc_drift: DriftParams = field(default_factory=DriftParams)

    def __post_init__(self):
        if min(self.sigma_b, self.sigma_d, self.sigma_e) < 0:
            raise ConfigError("noise standard deviations must be non-negative")

    @property
    def is_zero(self) -> bool:
        return (
            self.sigma_b == 0
            and self.sigma_d == 0
            and self.sigma_e == 0
            and self.omega_drift.sigma_rel == 0
            and self.osc_drift.sigma_rel == 0
        )


def zfs_sigmas_from_field(sigma_field: float, d_parallel: float, d_perp: float) -> tuple[float, float]:
    """Electric-field SD (V/m) to (sigma_d, sigma_e) in Hz via the linear susceptibilities."""
    return abs(d_parallel) * sigma_field, abs(d_perp) * sigma_field


NOISE_KEYS = {
    "sigma_b_t": "sigma_b",
    "sigma_d_hz": "sigma_d",
    "sigma_e_hz": "sigma_e",
    "rabi_drift_sigma_rel": ("omega_drift", "sigma_rel"),
    "rabi_drift_tau_s": ("omega_drift", "tau_corr"),
    "osc_drift_sigma_rel": ("osc_drift", "sigma_rel"),
    "osc_drift_tau_s": ("osc_drift", "tau_corr"),
}


def noise_model_from_kv(kv: dict[str, str]) -> NoiseModel:
    flat: dict = {}
    drifts: dict = {"omega_drift": {}, "osc_drift": {}}
    for key, target in NOISE_KEYS.items():
        if key not in kv:
            continue
        text = kv[key].strip().lower()
        value = math.inf if text in ("inf", "infinity") else float(parse_decimal(kv[key], key))
        if isinstance(target, tuple):
            drifts[target[0]][target[1]] = value
        else:
            flat[target] = value
    return NoiseModel(
        **flat,
        omega_drift=DriftParams(**drifts["omega_drift"]),
        osc_drift=DriftParams(**drifts["osc_drift"]),
    )


def noise_model_to_kv(m: NoiseModel) -> dict[str, str]:
    return {
        "sigma_b_t": repr(m.sigma_b),
        "sigma_d_hz": repr(m.sigma_d),
        "sigma_e_hz": repr(m.sigma_e),
        "rabi_drift_sigma_rel": repr(m.omega_drift.sigma_rel),
        "rabi_drift_tau_s": repr(m.omega_drift.tau_corr),
        "osc_drift_sigma_rel": repr(m.osc_drift.sigma_rel),
        "osc_drift_tau_s": repr(m.osc_drift.tau_corr),
    }


@dataclass(frozen=True)
class QuasiStaticSample:
    dB: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dD: float = 0.0
    dE: float = 0.0
    rabi_rel: float = 0.0  # relative dressing-amplitude offset at shot start
    osc_rel: float = 0.0  # relative dressing-carrier offset, held for the shot
    rabi_path: tuple[np.ndarray, np.ndarray] | None = None  # (knot times, rel offsets)

    def rabi_at(self, t: float) -> float:
        if self.rabi_path is None:
            return self.rabi_rel
        times, vals = self.rabi_path
        k = int(np.searchsorted(times, t, side="right")) - 1
        return float(vals[min(max(k, 0), len(vals) - 1)])


def stream(seed: int, *index: int) -> np.random.Generator:
    """Independent generator for (seed, index...), independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


def sample_quasistatic(model: NoiseModel, rng: np.random.Generator) -> QuasiStaticSample:
    db = rng.normal(0.0, 1.0, 3) * model.sigma_b
    dd, de = rng.normal(0.0, 1.0, 2) * (model.sigma_d, model.sigma_e)
    rabi_rel, osc_rel = rng.normal(0.0, 1.0, 2) * (model.omega_drift.sigma_rel, model.osc_drift.sigma_rel)
    return QuasiStaticSample(tuple(float(x) for x in db), float(dd), float(de), float(rabi_rel), float(osc_rel))


def drift_trace(
    params: DriftParams,
    base: float,
    grid: Sequence[float],
    rng: np.random.Generator,
    x0: float | None = None,
) -> np.ndarray:
    """Exact Ornstein-Uhlenbeck samples ``base + x(t)`` on an ascending grid.

    ``x`` has stationary SD ``sigma_rel * |base|`` and correlation time
    ``tau_corr``; the first value is drawn from the stationary law unless
    ``x0`` is given.
    """
    t = np.asarray(grid, dtype=float)
    if t.size and np.any(np.diff(t) < 0):
        raise ValueError("grid must be ascending")
    sd = params.sigma_rel * abs(base)
    out = np.empty(t.size)
    if t.size == 0:
        return out
    if sd == 0:
        out[:] = base + (x0 or 0.0)
        return out
    x = rng.normal(0.0, sd) if x0 is None else x0
    out[0] = x
    noise = rng.normal(0.0, 1.0, t.size - 1)
    for k in range(1, t.size):
        if math.isinf(params.tau_corr):
            a = 1.0
        else:
            a = math.exp(-(t[k] - t[k - 1]) / params.tau_corr)
        x = a * x + sd * math.sqrt(max(0.0, 1 - a * a)) * noise[k - 1]
        out[k] = x
    return base + out


def with_rabi_path(sample: QuasiStaticSample, params: DriftParams, t_end: float, n_knots: int, rng) -> QuasiStaticSample:
    """Attach a within-shot OU path of the relative dressing amplitude, starting at ``sample.rabi_rel``."""
    if math.isinf(params.tau_corr) or params.sigma_rel == 0:
        return sample
    times = np.linspace(0.0, t_end, n_knots + 1)
    vals = drift_trace(params, 1.0, times, rng, x0=sample.rabi_rel) - 1.0
    return QuasiStaticSample(sample.dB, sample.dD, sample.dE, sample.rabi_rel, sample.osc_rel, (times, vals))


# -- ensemble ---------------------------------------------------------------------


def ensemble_average(
    experiment: Callable[[QuasiStaticSample, np.random.Generator], "object"],
    model: NoiseModel,
    n_samples: int,
    seed: int,
    n_jobs: int = 1,
):
    """Average an experiment closure over quasi-static noise draws.

    ``experiment(sample, rng)`` returns an ExperimentResult for one
    realization; member ``i`` uses the stream (seed, i). The reduction runs
    in index order, so results do not depend on ``n_jobs``.
    """
    from .sequences import ExperimentResult

    if n_samples < 2:
        raise ValueError("need at least two ensemble members")

    def member(i):
        rng = stream(seed, i)
        sample = sample_quasistatic(model, rng)
        return experiment(sample, rng)

    if n_jobs == 1:
        runs = [member(i) for i in range(n_samples)]
    else:
        from joblib import Parallel, delayed

        runs = Parallel(n_jobs=n_jobs)(delayed(member)(i) for i in range(n_samples))
    stack = np.vstack([np.asarray(r.signal, dtype=float) for r in runs])
    meta = dict(runs[0].meta)
    meta.update(seed=int(seed), n_samples=int(n_samples))
    return ExperimentResult(
        x=np.asarray(runs[0].x, dtype=float),
        signal=stack.mean(axis=0),
        sigma=stack.std(axis=0, ddof=1),
        meta=meta,
    )


# -- decay fits -------------------------------------------------------------------

N_BOUNDS = (0.5, 4.0)


@dataclass(frozen=True)
class DecayFit:
    t2: float
    n: float
    amp: float
    offset: float
    freq: float
    phase: float
    sd: dict
    covariance: np.ndarray | None = None
    model: str = "ramsey"
    censored: bool = False  # envelope decayed < 5 % over the scan: t2 is a lower bound

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "t2": self.t2,
            "n": self.n,
            "amp": self.amp,
            "offset": self.offset,
            "freq": self.freq,
            "phase": self.phase,
            "censored": self.censored,
            "sd": {k: float(v) for k, v in self.sd.items()},
        }


def ramsey_model(t, offset, amp, t2, n, freq, phase):
    return offset + amp * np.exp(-((t / t2) ** n)) * np.cos(2 * np.pi * freq * t + phase)


def echo_model(t, offset, amp, t2, n):
    return offset + amp * np.exp(-((t / t2) ** n))


def _fringe_guess(t, y):
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6):
        tu = np.linspace(t[0], t[-1], t.size)
        y = np.interp(tu, t, y)
        dt = np.diff(tu)
    y = y - y.mean()
    nfft = 16 * t.size
    spec = np.abs(np.fft.rfft(y, nfft))
    f = np.fft.rfftfreq(nfft, dt[0])
    spec[0] = 0
    return float(f[np.argmax(spec)])


def fit_decay(result, model: str = "ramsey", freq_guess: float | None = None) -> DecayFit:
    """Stretched-exponential envelope fit by nonlinear least squares.

    ramsey: ``offset + amp exp[-(t/t2)^n] cos(2 pi freq t + phase)``;
    echo: the same without the cosine. Parameter SDs come from the fit
    covariance.
    """
    t = np.asarray(result.x, dtype=float)
    y = np.asarray(result.signal, dtype=float)
    if t.size < 8:
        raise FitError("need at least 8 points")
    span = t.max() - t.min()
    ptp = np.ptp(y)
    if ptp < 1e-9 * max(1.0, np.abs(y).max()):
        raise FitError("signal is constant: amplitude is degenerate")
    lo_t2, hi_t2 = span * 1e-3, span * 1e4
    if model == "ramsey":
        f0 = _fringe_guess(t, y) if freq_guess is None else freq_guess
        offset0 = float(y.mean())
        # phase guess: project onto the fringe
        c = np.sum((y - offset0) * np.cos(2 * np.pi * f0 * t))
        s = np.sum((y - offset0) * np.sin(2 * np.pi * f0 * t))
        ph0 = math.atan2(-s, c)
        amp0 = max(ptp / 2, 1e-6)
        best = None
        for t2g in (span / 3, span, 3 * span):
            p0 = [offset0, amp0, min(max(t2g, lo_t2 * 1.01), hi_t2 * 0.99), 2.0, f0, ph0]
            bounds = (
                [-np.inf, 0.0, lo_t2, N_BOUNDS[0], 0.0, -4 * np.pi],
                [np.inf, np.inf, hi_t2, N_BOUNDS[1], np.inf, 4 * np.pi],
            )
            try:
                popt, pcov = curve_fit(ramsey_model, t, y, p0=p0, bounds=bounds, maxfev=20000)
            except (RuntimeError, ValueError):
                continue
            cost = float(np.sum((ramsey_model(t, *popt) - y) ** 2))
            if best is None or cost < best[0]:
                best = (cost, popt, pcov)
        if best is None:
            raise FitError(f"ramsey fit did not converge (freq guess {f0:.4g} Hz, span {span:.4g} s)")
        _, popt, pcov = best
        names = ("offset", "amp", "t2", "n", "freq", "phase")
    elif model == "echo":
        offset0 = float(y[-1])
        amp0 = float(y[0] - y[-1]) or ptp
        best = None
        for t2g in (span / 3, span, 3 * span):
            p0 = [offset0, amp0, t2g, 2.0]
            bounds = ([-np.inf, -np.inf, lo_t2, N_BOUNDS[0]], [np.inf, np.inf, hi_t2, N_BOUNDS[1]])
            try:
                popt, pcov = curve_fit(echo_model, t, y, p0=p0, bounds=bounds, maxfev=20000)
            except (RuntimeError, ValueError):
                continue
            cost = float(np.sum((echo_model(t, *popt) - y) ** 2))
            if best is None or cost < best[0]:
                best = (cost, popt, pcov)
        if best is None:
            raise FitError("echo fit did not converge")
        _, popt, pcov = best
        names = ("offset", "amp", "t2", "n")
    else:
        raise ValueError(f"unknown decay model {model!r}")

    if not np.all(np.isfinite(popt)):
        raise FitError("fit returned non-finite parameters")
    if abs(popt[1]) < 1e-6 * max(1.0, abs(popt[0])):
        raise FitError("fitted amplitude vanishes")
    sd = dict(zip(names, np.sqrt(np.clip(np.diag(pcov), 0, None))))
    p = dict(zip(names, popt))
    if min(abs(p["n"] - N_BOUNDS[0]), abs(p["n"] - N_BOUNDS[1])) < 1e-6:
        warnings.warn(f"stretch exponent pinned at bound n={p['n']:.3g}", FitBoundWarning, stacklevel=2)
    censored = math.exp(-((t.max() / p["t2"]) ** p["n"])) > 0.95
    return DecayFit(
        t2=float(p["t2"]),
        n=float(p["n"]),
        amp=float(p["amp"]),
        offset=float(p["offset"]),
        freq=float(p.get("freq", 0.0)),
        phase=float(p.get("phase", 0.0)),
        sd=sd,
        covariance=pcov,
        model=model,
        censored=censored,
    )


# -- dephasing scaling --------------------------------------------------------------


@dataclass(frozen=True)
class ScalingRow:
    sigma_b: float
    t2star: float
    t2star_sd: float
    stretch_n: float
    censored: bool = False


@dataclass(frozen=True)
class ScalingStudy:
    rows: tuple[ScalingRow, ...]
    slope: float  # d log(1/T2*) / d log(sigma_b)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma_b_tesla", "t2star_s", "t2star_sd_s", "stretch_n"])
            for r in self.rows:
                w.writerow([repr(r.sigma_b), repr(r.t2star), repr(r.t2star_sd), repr(r.stretch_n)])


def loglog_slope(sigmas: Sequence[float], t2s: Sequence[float]) -> float:
    s = np.asarray(sigmas, dtype=float)
    t = np.asarray(t2s, dtype=float)
    ok = (s > 0) & np.isfinite(t)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(s[ok]), np.log(1.0 / t[ok]), 1)[0])


def dephasing_scaling_study(
    basis: str,
    sigma_bs: Sequence[float],
    cfg=None,
    n_samples: int = 100,
    seed: int = 0,
    n_points: int = 41,
    n_jobs: int = 1,
    base_model: NoiseModel | None = None,
) -> ScalingStudy:
    """Fitted Ramsey T2* against the magnetic noise amplitude for one basis."""
    from . import sequences as sq

    if len(sigma_bs) < 3:
        raise ValueError("need at least three noise amplitudes")
    base_model = base_model or NoiseModel()
    rows = []
    for i, sb in enumerate(sigma_bs):
        if sb == 0:
            rows.append(ScalingRow(0.0, math.inf, math.nan, math.nan, censored=True))
            continue
        model = NoiseModel(sb, base_model.sigma_d, base_model.sigma_e, base_model.omega_drift, base_model.osc_drift)
        setup = sq.standard_setup(basis, cfg)
        res, fit = sq.ramsey_t2star(setup, basis, model, n_samples=n_samples, seed=seed + i, n_points=n_points, n_jobs=n_jobs)
        rows.append(ScalingRow(sb, fit.t2, float(fit.sd["t2"]), fit.n, fit.censored))
    slope = loglog_slope([r.sigma_b for r in rows], [r.t2star if not r.censored else math.nan for r in rows])
    return ScalingStudy(tuple(rows), slope)
