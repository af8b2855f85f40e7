"""Ramsey T2* of the DPS, zero-field and Zeeman bases under one magnetic noise model, plus scaling slopes."""
import warnings

from _common import parser, pyplot, write_rows
from dressedspin import sequences as sq
from dressedspin.noise import FitBoundWarning, NoiseModel, dephasing_scaling_study


def main():
    p = parser(__doc__)
    p.add_argument("--sigma-b", type=float, default=13e-6)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--scaling", action="store_true", help="also sweep sigma_b for log-log slopes")
    a = p.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)
    warnings.simplefilter("ignore", FitBoundWarning)

    model = NoiseModel(a.sigma_b)
    rows, results = [], {}
    for basis in sq.BASES:
        res, fit = sq.ramsey_t2star(sq.standard_setup(basis), basis, model, a.samples, a.seed, n_jobs=a.jobs)
        results[basis] = (res, fit)
        rows.append((basis, fit.t2, float(fit.sd["t2"]), fit.n))
        res.to_csv(a.out / f"ramsey_{basis}.csv")
        print(f"{basis:10s} T2* = {fit.t2:.4e} s  (n = {fit.n:.2f})")
    write_rows(a.out / "t2star_hierarchy.csv", ["basis", "t2star_s", "t2star_sd_s", "stretch_n"], rows)

    if a.scaling:
        for basis in ("zeeman", "dps"):
            sigmas = [a.sigma_b * f for f in (0.25, 0.5, 1.0, 2.0)]
            study = dephasing_scaling_study(basis, sigmas, n_samples=a.samples // 2, seed=a.seed, n_jobs=a.jobs)
            study.to_csv(a.out / f"scaling_{basis}.csv")
            print(f"{basis}: d log(1/T2*) / d log(sigma_b) = {study.slope:.2f}")

    if a.plot:
        plt = pyplot()
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        for ax, (basis, (res, fit)) in zip(axes, results.items()):
            ax.plot(res.x, res.signal, ".")
            ax.set(title=f"{basis}: T2* = {fit.t2:.3g} s", xlabel="tau (s)")
        fig.tight_layout()
        fig.savefig(a.out / "t2star_hierarchy.png", dpi=120)


if __name__ == "__main__":
    main()
