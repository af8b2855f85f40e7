"""Dressed splitting versus static field along x, y and z, with an even quartic fit."""
import numpy as np

from _common import parser, pyplot, write_rows
from dressedspin.floquet import dressed_splitting_curve, fit_even_poly
from dressedspin.spinsys import Drive, SpinConfig


def main():
    p = parser(__doc__)
    p.add_argument("--range-t", type=float, default=13e-6)
    p.add_argument("--points", type=int, default=27)
    p.add_argument("--omega", type=float, default=350e3)
    a = p.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)

    cfg = SpinConfig()
    dressing = Drive("magnetic-z", 2 * cfg.e, a.omega)
    fields = np.linspace(-a.range_t, a.range_t, a.points)
    curves = {ax: dressed_splitting_curve(cfg, dressing, ax, fields) for ax in "xyz"}
    rows = []
    for ax, c in curves.items():
        f = fit_even_poly(c)
        asym = float(np.max(np.abs(c.delta_f0 - c.delta_f0[::-1])))
        rows.append((ax, f.c0, f.c2, f.c4, f.rms_residual, asym))
        print(f"{ax}: c2 {f.c2:+.4e} Hz/T^2  c4 {f.c4:+.4e} Hz/T^4  rms {f.rms_residual:.2e} Hz  asym {asym:.1e} Hz")
        c.to_csv(a.out / f"dispersion_{ax}.csv")
    write_rows(a.out / "dispersion_fits.csv", ["axis", "c0_hz", "c2_hz_per_t2", "c4_hz_per_t4", "rms_hz", "asym_hz"], rows)

    if a.plot:
        plt = pyplot()
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, c in curves.items():
            ax.plot(c.field_values * 1e6, c.delta_f0 - c.delta_f0[len(fields) // 2], label=name)
        ax.set(xlabel="B (uT)", ylabel="splitting shift (Hz)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(a.out / "dispersion.png", dpi=120)


if __name__ == "__main__":
    main()
