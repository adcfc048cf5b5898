"""L∞ error of the Getoor profile under mesh refinement (a = 1, b = 0, p = 2, s = 1/2, N = 1)."""

import argparse
import math

import numpy as np

from ndphase import ProblemSpec, GridFunction, make_field, make_kernel, pv_point_eval, solve_dirichlet
from ndphase.model import ZERO_EXTERIOR


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, nargs="+", default=[64, 128, 256], help="cells per unit length")
    ap.add_argument("--halfwidth", type=float, default=1.25)
    args = ap.parse_args()
    spec = ProblemSpec(2, 2, 0.5, 0.5)
    kernel = make_kernel()
    exact = make_field("getoor")
    print("h,forcing,linf_error")
    for m in args.levels:
        n = int(round(2 * args.halfwidth * m))
        prof = GridFunction.from_function(exact, args.halfwidth, n, 1, exterior=ZERO_EXTERIOR)
        f = float(pv_point_eval(prof, kernel, spec, np.zeros(1)))
        u = solve_dirichlet(spec, kernel, f, ZERO_EXTERIOR, halfwidth=args.halfwidth, n=n).solution
        err = float(np.max(np.abs(u.values.ravel() - exact(u.flat_nodes()))))
        print(f"{1 / m:.6g},{f:.10g},{err:.6e}")
    print(f"# reference forcing 2*pi = {2 * math.pi:.10g}")


if __name__ == "__main__":
    main()
