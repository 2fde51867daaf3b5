"""Phase-portrait and return-map data for the rimless wheel (CSV only).

Outputs, under --out:
  phase_<k>.csv    trajectories (t, theta, thetadot, segment_id) from a grid of starts
  return_map.csv   omega_in, omega_out over the Poincare section
  region.csv       the speed bound b(theta) and the homoclinic speed on the region's theta range
"""

import argparse
import csv
import math
from pathlib import Path

import numpy as np

from hybridcert.hybridsim import SimOptions, integrate, poincare_map
from hybridcert.model import rimless_wheel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="phase_out")
    ap.add_argument("--t-max", type=float, default=8.0)
    ap.add_argument("--starts", type=int, default=6)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    wheel = rimless_wheel()
    p = wheel.params
    lo, hi = p["gamma"] - p["alpha"], p["gamma"] + p["alpha"]
    for k, w in enumerate(np.linspace(0.33, 0.6, args.starts)):
        tr = integrate(wheel, [lo, w], args.t_max, SimOptions())
        (out / f"phase_{k}.csv").write_text(tr.trace_csv())

    rec = poincare_map(wheel)
    (out / "return_map.csv").write_text(rec.samples_csv())

    th = np.linspace(lo, hi, 201)
    b = np.polyval(list(reversed(p["b_coeffs"])), th)
    hom = np.sqrt(np.maximum(2 * p["g_over_l"] * (1 - np.cos(th)), 0.0))
    with open(out / "region.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "speed_bound", "homoclinic"])
        for row in zip(th, b, hom):
            w.writerow([repr(float(v)) for v in row])
    print(f"fixed point {rec.fixed_point:.10f}, derivative {rec.derivative_at_fixed_point:.6f}; wrote {out}")


if __name__ == "__main__":
    main()
