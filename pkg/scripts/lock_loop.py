"""Resonance feedback: a 20 h drift trace with the loop on for the first 10 h, and open/closed T2*."""
import numpy as np

from _common import parser, pyplot, write_rows
from dressedspin.lockloop import Controller, Plant, feedback_run, open_vs_closed_t2star
from dressedspin.noise import stream


def main():
    p = parser(__doc__)
    p.add_argument("--k-p", type=float, default=0.5)
    p.add_argument("--seeds", type=int, default=20)
    a = p.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)

    plant, ctl = Plant(), Controller(k_p=a.k_p)
    hours = 20
    trace = feedback_run(plant, ctl, hours * 3600.0, lambda t: t < hours * 1800.0, stream(a.seed, 0))
    trace.to_csv(a.out / "lock_trace.csv")
    on, off = trace.residual[trace.enabled], trace.residual[~trace.enabled]
    print(f"residual SD: locked {on.std():.2f} Hz, free-running {off.std():.2f} Hz")

    rows = []
    for seed in range(a.seed, a.seed + a.seeds):
        closed, opened = open_vs_closed_t2star(plant, ctl, seed=seed)
        rows.append((seed, closed.t2, opened.t2, opened.t2 / closed.t2))
    write_rows(a.out / "lock_t2star.csv", ["seed", "t2_closed_s", "t2_open_s", "ratio"], rows)
    ratios = np.array([r[3] for r in rows])
    print(f"T2* open/closed: median {np.median(ratios):.3f}, mean {ratios.mean():.3f}, range {ratios.min():.2f}-{ratios.max():.2f}")

    if a.plot:
        plt = pyplot()
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(trace.time / 3600, trace.residual, lw=0.8)
        ax.axvline(hours / 2, color="k", ls="--")
        ax.set(xlabel="time (h)", ylabel="residual detuning (Hz)")
        fig.tight_layout()
        fig.savefig(a.out / "lock_trace.png", dpi=120)


if __name__ == "__main__":
    main()
