import math

import numpy as np
import pytest

from dressedspin import sequences as sq
from dressedspin.noise import NoiseModel, stream
from dressedspin.sequences import (
    DressingOff,
    DressingOn,
    DriveOffPhaseError,
    ExperimentResult,
    Init,
    InvalidSequenceError,
    MwPulse,
    PulseSequence,
    Readout,
    Shot,
    Wait,
    run_sequence,
)
from dressedspin.spinsys import Drive, FieldEnv, SpinConfig


@pytest.fixture(scope="module")
def dps():
    return sq.standard_setup("dps")


@pytest.fixture(scope="module")
def bare():
    return sq.standard_setup("zero-field")


# -- sequence structure ----------------------------------------------------------

DRESS = Drive("magnetic-z", 2 * 18.353164e6, 350e3)


@pytest.mark.parametrize(
    "segs",
    [
        [],
        [Wait(1e-6), Readout()],
        [Init(), Wait(1e-6)],
        [Init(), Wait(-1e-9), Readout()],
        [Init(), Readout(), Wait(1e-6), Readout()],
        [Init(), Wait(1e-6), Init(), Readout()],
        [Init(), DressingOff(), Readout()],
        [Init(), DressingOn(DRESS), DressingOn(DRESS), Readout()],
        [Init(), DressingOn(DRESS), DressingOff(), DressingOn(DRESS.with_(rabi=1e5)), DressingOff(), Readout()],
    ],
)
def test_invalid_sequences(segs):
    with pytest.raises(InvalidSequenceError):
        PulseSequence(segs)


def test_sequence_concatenation():
    seq = PulseSequence([Init(), DressingOn(DRESS), Wait(1e-6), DressingOff(), Readout()])
    assert seq.dressing == DRESS
    assert PulseSequence([Init(), Readout()]).dressing is None
    with pytest.raises(InvalidSequenceError):
        seq + [Wait(1e-6)]


def test_init_then_readout_is_one(cfg):
    assert run_sequence([Init(), Readout("0")], cfg, FieldEnv()) == 1.0


def test_init_fidelity(cfg):
    assert run_sequence([Init(0.9), Readout("0")], cfg, FieldEnv()) == pytest.approx(0.9)


def test_pi_pulse_empties_zero(bare):
    p = run_sequence([Init(), bare.pulse("0-+", math.pi), Readout("0")], bare.cfg, bare.env)
    assert p == pytest.approx(0.0, abs=1e-3)


def test_pi_pulse_on_minus_line(bare):
    s = bare.shot()
    s.run([Init(), bare.pulse("0--", math.pi)])
    assert s.population("-") == pytest.approx(1.0, abs=1e-3)


def test_drive_off_phase_undefined(cfg):
    shot = Shot(cfg, FieldEnv(), Drive("magnetic-z", 0.0, 350e3))
    shot.run([Init(), DressingOn(Drive("magnetic-z", 0.0, 350e3))])
    with pytest.raises(DriveOffPhaseError):
        shot.apply(DressingOff())


def test_dressing_off_lands_on_carrier_zero(dps):
    s = dps.shot()
    s.run([Init(), DressingOn(dps.dressing), Wait(1.234e-7), DressingOff()])
    d = dps.dressing
    assert math.cos(2 * math.pi * d.carrier * s.t + d.phase) == pytest.approx(0.0, abs=1e-6)


def test_uninitialized_shot_rejected(cfg):
    with pytest.raises(InvalidSequenceError):
        Shot(cfg, FieldEnv(), None).apply(Wait(1e-6))


def test_readout_sampling_and_contrast(bare):
    seg = Readout("0", shots=1000, contrast=(0.2, -0.1))
    s = bare.shot()
    s.apply(Init())
    assert s.readout(seg, stream(1)) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        s.readout(seg)
    s.apply(bare.pulse("0-+", math.pi / 2))
    vals = [s.readout(Readout("0", shots=1000), stream(2, k)) for k in range(50)]
    assert np.mean(vals) == pytest.approx(0.5, abs=0.01)
    assert np.std(vals) == pytest.approx(math.sqrt(0.25 / 1000), rel=0.3)


# -- results ---------------------------------------------------------------------


def test_result_csv_round_trip(tmp_path):
    r = ExperimentResult([0.0, 1e-3, 2e-3], [0.1, 0.123456789012345, 1.0], [0.0, 0.01, 0.2], {"seed": 3})
    r.to_csv(tmp_path / "r.csv")
    back = ExperimentResult.from_csv(tmp_path / "r.csv")
    assert np.array_equal(back.x, r.x) and np.array_equal(back.signal, r.signal) and np.array_equal(back.sigma, r.sigma)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "x,signal,sigma"


def test_result_invariants():
    with pytest.raises(ValueError):
        ExperimentResult([0, 1], [0], [0, 0])
    with pytest.raises(ValueError):
        ExperimentResult([0], [0], [-1])


# -- DPS preparation and readout ---------------------------------------------------


def test_dps_round_trip(dps):
    s = dps.shot()
    prep = sq.dps_prepare(dps)
    s.run(prep[:-1])
    assert s.population("+1") >= 0.99
    plus = s.copy().run(sq.dps_readout(dps, "+1"))
    minus = s.copy().run(sq.dps_readout(dps, "-1"))
    assert plus >= 0.99
    assert minus <= 0.01


def test_dps_prepare_needs_dressing(bare):
    with pytest.raises(ValueError):
        sq.dps_prepare(bare)
    with pytest.raises(ValueError):
        sq.dps_readout(bare, "0")


def test_dps_superposition_is_balanced(dps):
    s = dps.shot()
    s.run(sq.dps_prepare(dps))
    c = s.state("+1").conj() @ s.rho @ s.state("-1")
    assert s.population("+1") == pytest.approx(0.5, abs=0.01)
    assert abs(c) == pytest.approx(0.5, abs=0.005)


def _fringe_phase(res, f):
    a = np.c_[np.cos(2 * np.pi * f * res.x), np.sin(2 * np.pi * f * res.x)]
    c, s = np.linalg.lstsq(a, res.signal - 0.5, rcond=None)[0]
    return math.atan2(-s, c)


def test_dps_phase_shift_gives_half_period_offset(dps):
    # the residual two-photon leakage of the dressed pi pulse tilts the offset by ~0.17 rad
    taus = np.linspace(0, 12e-3, 25)
    a = sq.ramsey_experiment(dps, "dps", 166.6, taus, phi=0.0)
    b = sq.ramsey_experiment(dps, "dps", 166.6, taus, phi=math.pi)
    shift = (_fringe_phase(b, 166.6) - _fringe_phase(a, 166.6)) % (2 * math.pi)
    assert shift == pytest.approx(math.pi, abs=0.2)
    assert np.ptp(a.signal) > 0.95


# -- ODMR ----------------------------------------------------------------------


def _doublet(setup, span, points=241):
    res = sq.odmr_scan(setup, np.linspace(-span, span, points))
    return sq.resonance_dips(res.x, res.signal, 2)


def test_odmr_doublet_at_half_omega(dps):
    (lo, _, d1), (hi, _, d2) = _doublet(dps, 300e3)
    assert hi - lo == pytest.approx(350e3, rel=0.01)
    assert lo == pytest.approx(-175e3, rel=0.01) and hi == pytest.approx(175e3, rel=0.01)
    assert min(d1, d2) > 0.5


@pytest.mark.parametrize("omega", [100e3, 500e3])
def test_odmr_doublet_tracks_omega(omega):
    setup = sq.standard_setup("dps", rabi=omega)
    (lo, _, _), (hi, _, _) = _doublet(setup, 0.85 * omega)
    assert hi - lo == pytest.approx(omega, rel=0.01)


def test_odmr_undressed_single_line(bare):
    res = sq.odmr_scan(bare, np.linspace(-50e3, 50e3, 101))
    dips = sq.resonance_dips(res.x, res.signal, 1)
    assert dips[0][0] == pytest.approx(0.0, abs=500.0)
    assert dips[0][2] > 0.99


def test_odmr_probe_limit(dps):
    with pytest.raises(ValueError):
        sq.odmr_scan(dps, [0.0], probe_rabi=100e3)


def test_resonance_dips_on_synthetic_lines():
    x = np.linspace(-10, 10, 401)
    y = 1 - 0.6 / (1 + ((x + 3) / 0.5) ** 2) - 0.4 / (1 + ((x - 4) / 0.5) ** 2)
    (c1, w1, d1), (c2, w2, d2) = sq.resonance_dips(x, y, 2, baseline=1.0)
    assert c1 == pytest.approx(-3, abs=0.02) and c2 == pytest.approx(4, abs=0.02)
    assert w1 == pytest.approx(1.0, rel=0.05)
    assert d1 == pytest.approx(0.6, rel=0.02)


# -- Rabi ----------------------------------------------------------------------


@pytest.mark.parametrize("transition", ["0-+1", "0--1", "+1--1"])
def test_rabi_frequency_matches_programmed(dps, transition):
    r = dps.default_rabi(transition)
    t = np.linspace(0, 3 / r, 61)
    res = sq.rabi_experiment(dps, transition, t)
    f, _ = sq.fit_oscillation(res.x, res.signal)
    assert f == pytest.approx(r, rel=0.02)


def test_rabi_half_and_full_period(bare):
    r = bare.pulse_rabi
    res = sq.rabi_experiment(bare, "0-+", [0.0, 1 / (2 * r), 1 / r])
    assert res.signal[1] == pytest.approx(0.0, abs=1e-3)
    assert res.signal[2] == pytest.approx(res.signal[0], abs=0.01)


def test_electric_rabi_antiphase(dps):
    t = np.linspace(0, 2 / dps.electric_rabi, 21)
    up = sq.rabi_experiment(dps, "+1--1", t, readout="+1").signal
    dn = sq.rabi_experiment(dps, "+1--1", t, readout="-1").signal
    assert np.corrcoef(up, dn)[0, 1] < -0.99
    assert np.allclose(up + dn, 1.0, atol=0.02)


def test_rabi_rejects_unknown_transition(dps):
    with pytest.raises(ValueError):
        sq.rabi_experiment(dps, "+--", [0.0])


# -- Ramsey and echo -----------------------------------------------------------------


def test_dps_ramsey_fringe_frequency(dps):
    taus = np.linspace(0, 18e-3, 61)
    res = sq.ramsey_experiment(dps, "dps", 166.6, taus)
    f, _ = sq.fit_oscillation(res.x, res.signal)
    assert f == pytest.approx(166.6, rel=0.005)
    assert 1 / f == pytest.approx(6.0024e-3, rel=0.005)


def test_ramsey_zero_detuning_is_flat(dps):
    res = sq.ramsey_experiment(dps, "dps", 0.0, np.linspace(0, 10e-3, 11))
    assert np.ptp(res.signal) < 1e-3


@pytest.mark.parametrize("basis", ["zero-field", "zeeman"])
def test_phase_and_carrier_modes(basis):
    setup = sq.standard_setup(basis)
    taus = np.linspace(0, 40e-6, 41)
    b = sq.ramsey_experiment(setup, basis, 1e5, taus, mode="phase")
    assert np.allclose(b.signal, 0.5 - 0.5 * np.cos(2 * np.pi * 1e5 * taus), atol=1e-3)
    # detuned pulses also precess during the pulses; only the fringe rate is compared
    a = sq.ramsey_experiment(setup, basis, 1e5, taus, mode="carrier")
    assert sq.fit_oscillation(a.x, a.signal)[0] == pytest.approx(1e5, rel=0.005)
    with pytest.raises(ValueError):
        sq.ramsey_experiment(setup, basis, 1e5, taus, mode="bogus")


def test_echo_without_pi_equals_ramsey(bare):
    m = NoiseModel(13e-6)
    taus = np.linspace(0, 200e-6, 9)
    echo = sq.hahn_echo_experiment(bare, "zero-field", taus, m, n_samples=4, seed=3, refocus=False)
    ram = sq.ramsey_experiment(bare, "zero-field", 0.0, taus, m, n_samples=4, seed=3)
    assert np.allclose(echo.signal, ram.signal, atol=1e-12)


def test_echo_refocuses_static_offset(bare):
    m = NoiseModel(13e-6)
    taus = np.linspace(0, 400e-6, 5)
    echo = sq.hahn_echo_experiment(bare, "zero-field", taus, m, n_samples=6, seed=4)
    assert np.all(echo.signal > 0.98)


def test_ensemble_experiments_are_deterministic(bare):
    m = NoiseModel(13e-6, sigma_d=2e3)
    taus = np.linspace(0, 100e-6, 6)
    a = sq.ramsey_experiment(bare, "zero-field", 5e4, taus, m, n_samples=4, seed=9)
    b = sq.ramsey_experiment(bare, "zero-field", 5e4, taus, m, n_samples=4, seed=9, n_jobs=2)
    assert np.array_equal(a.signal, b.signal) and np.array_equal(a.sigma, b.sigma)
    assert a.meta == b.meta


def test_envelope_time_gaussian_oracle():
    f = stream(5).normal(0, 1e3, 20000)
    assert sq.envelope_time(f) == pytest.approx(1 / (math.sqrt(2) * math.pi * 1e3), rel=0.03)
    assert math.isinf(sq.envelope_time(np.full(10, 3.0)))


def test_transition_spread_dps_suppressed():
    m = NoiseModel(13e-6)
    _, w_dps = sq.transition_spread(sq.standard_setup("dps"), "dps", m, n=100)
    _, w_zee = sq.transition_spread(sq.standard_setup("zeeman"), "zeeman", m, n=100)
    assert w_zee / w_dps > 1e3


def test_unknown_basis():
    with pytest.raises(ValueError):
        sq.standard_setup("ladder")
    with pytest.raises(ValueError):
        sq.standard_setup("zero-field").transition("+1--1")


def test_config_is_carried(bare):
    cfg = SpinConfig()
    assert sq.standard_setup("zeeman", cfg).env.B == (0.0, 0.0, 1.2e-3)
