"""DPS Hahn echo versus Ramsey under quasi-static noise with and without a correlated Rabi drift."""
import warnings

import numpy as np

from _common import parser, pyplot
from dressedspin import sequences as sq
from dressedspin.noise import DriftParams, FitBoundWarning, NoiseModel, fit_decay


def main():
    p = parser(__doc__)
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--tau-corr", type=float, default=0.05, help="drift correlation time (s)")
    a = p.parse_args()
    warnings.simplefilter("ignore", FitBoundWarning)
    a.out.mkdir(parents=True, exist_ok=True)

    setup = sq.standard_setup("dps")
    for label, model in (
        ("static", NoiseModel(13e-6)),
        ("drift", NoiseModel(13e-6, omega_drift=DriftParams(1e-4, a.tau_corr))),
    ):
        ram_res, ram = sq.ramsey_t2star(setup, "dps", model, a.samples, a.seed)
        taus = np.linspace(0, 6 * ram.t2, 25)
        echo = sq.hahn_echo_experiment(setup, "dps", taus, model, a.samples, a.seed + 1)
        ram_res.to_csv(a.out / f"ramsey_{label}.csv")
        echo.to_csv(a.out / f"echo_{label}.csv")
        amp = (echo.signal[-1] - 0.5) / (echo.signal[0] - 0.5)
        # a flat echo has no decay time worth fitting
        t2e = f"{fit_decay(echo, 'echo').t2:.4g} s" if amp < 0.8 else "no visible decay"
        print(f"{label:6s}: T2* {ram.t2:.4g} s, T2(echo) {t2e}, echo amplitude at {taus[-1]:.3g} s = {amp:.3f}")
        if a.plot:
            plt = pyplot()
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.plot(ram_res.x, ram_res.signal, ".", label="Ramsey")
            ax.plot(echo.x, echo.signal, "o-", label="echo")
            ax.set(xlabel="tau (s)", ylabel="P", title=label)
            ax.legend()
            fig.tight_layout()
            fig.savefig(a.out / f"echo_{label}.png", dpi=120)


if __name__ == "__main__":
    main()
