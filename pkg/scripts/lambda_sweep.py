"""Feasibility sweep over the contraction rate for the rimless-wheel preset.

Writes one CSV row per lambda: solver status, iterations, margin, and the
sample-check outcome for feasible certificates.
"""

import argparse
import csv
import sys
import time

from hybridcert.cert import sample_check, synthesize
from hybridcert.conditions import CertificateTemplate
from hybridcert.model import rimless_wheel


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.2, 0.5, 1.0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="-", help="CSV path, or - for stdout")
    args = ap.parse_args(argv)

    wheel = rimless_wheel()
    rows = []
    for lam in args.lambdas:
        t0 = time.perf_counter()
        res = synthesize(wheel, CertificateTemplate(lam=lam))
        secs = time.perf_counter() - t0
        check = ""
        if res.certificate is not None:
            rep = sample_check(wheel, res.certificate, args.samples, seed=args.seed)
            check = "pass" if rep.passed else "fail"
        rows.append([lam, res.status.value, res.solution.iterations, f"{res.solution.margin:.6e}", check, f"{secs:.2f}"])
        print(f"lambda {lam:g}: {res.status.value} {check}", file=sys.stderr)

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["lambda", "status", "iterations", "margin", "check", "seconds"])
    w.writerows(rows)
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
