"""Autler-Townes doublet versus dressing strength, and Floquet lines versus a transverse field."""
import numpy as np

from _common import parser, pyplot, write_rows
from dressedspin import sequences as sq
from dressedspin.floquet import transition_spectrum
from dressedspin.spinsys import FieldEnv


def main():
    p = parser(__doc__)
    p.add_argument("--omegas", default="100e3,200e3,350e3,500e3")
    p.add_argument("--points", type=int, default=241)
    a = p.parse_args()

    rows, traces = [], {}
    for om in (float(s) for s in a.omegas.split(",")):
        setup = sq.standard_setup("dps", rabi=om)
        deltas = np.linspace(-0.85 * om, 0.85 * om, a.points)
        res = sq.odmr_scan(setup, deltas)
        (lo, w1, _), (hi, w2, _) = sq.resonance_dips(res.x, res.signal, 2)
        rows.append((om, lo, hi, hi - lo, (hi - lo) / om - 1, 0.5 * (w1 + w2)))
        traces[om] = res
        print(f"Omega {om / 1e3:6.1f} kHz: dips {lo / 1e3:+8.2f} {hi / 1e3:+8.2f} kHz, rel. error {(hi - lo) / om - 1:+.2e}")
    write_rows(a.out / "odmr_doublet.csv", ["omega_hz", "low_hz", "high_hz", "separation_hz", "rel_error", "fwhm_hz"], rows)

    # Floquet lines along Bx at the nominal dressing
    setup = sq.standard_setup("dps")
    bxs = np.linspace(-0.2e-3, 0.2e-3, 21)
    lines = [transition_spectrum(setup.cfg, FieldEnv(B=(bx, 0, 0)), setup.dressing) for bx in bxs]
    write_rows(a.out / "floquet_lines_bx.csv", ["bx_t", "plus_hz", "minus_hz"],
               [(float(b), l.plus, l.minus) for b, l in zip(bxs, lines)])

    if a.plot:
        plt = pyplot()
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        for om, res in traces.items():
            ax1.plot(res.x / 1e3, res.signal, label=f"{om / 1e3:.0f} kHz")
        ax1.set(xlabel="probe detuning (kHz)", ylabel="P(|0>)")
        ax1.legend()
        ax2.plot(bxs * 1e3, [l.plus / 1e3 for l in lines], "k-")
        ax2.plot(bxs * 1e3, [l.minus / 1e3 for l in lines], "k-")
        ax2.set(xlabel="Bx (mT)", ylabel="line detuning (kHz)")
        fig.tight_layout()
        fig.savefig(a.out / "odmr_doublet.png", dpi=120)


if __name__ == "__main__":
    main()
